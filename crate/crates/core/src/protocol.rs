//! The broadcast message protocol: a line-oriented grammar standing in for
//! free-form chat, plus the analyzer that distills opinions, agreement, and
//! spatial facts from a transcript.
//!
//! Wire form (full grammar in `docs/protocol-grammar.md`):
//!
//! ```text
//! <timestamp> <sender> <KIND> <args> [# note]
//! ```
//!
//! Coordinates are written `[x,y]` or `[x,y,h]` at 2-decimal precision,
//! places as `<Place Name>`. The analyzer implements three rules on top of
//! plain stance tracking: unanimity, 5-second no-objection finalization,
//! and exclusion of agents silent more than 10 s after a direct question.

use crate::geom::Pose2D;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Seconds of no-objection silence after a FINALIZE before agreement holds.
pub const FINALIZE_QUIET_SECS: u32 = 5;
/// Seconds of silence after a direct ask before an agent is presumed caught.
pub const SILENCE_EXCLUSION_SECS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eta {
    Seconds(u32),
    Impossible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpposeReason {
    EtaDegraded,
    TooFar,
    Unsafe,
    Impossible,
}

impl OpposeReason {
    fn keyword(self) -> &'static str {
        match self {
            OpposeReason::EtaDegraded => "ETA_DEGRADED",
            OpposeReason::TooFar => "TOO_FAR",
            OpposeReason::Unsafe => "UNSAFE",
            OpposeReason::Impossible => "IMPOSSIBLE",
        }
    }

    fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "ETA_DEGRADED" => OpposeReason::EtaDegraded,
            "TOO_FAR" => OpposeReason::TooFar,
            "UNSAFE" => OpposeReason::Unsafe,
            "IMPOSSIBLE" => OpposeReason::Impossible,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    PoseReport(Pose2D),
    SentinelReport(Vec<Pose2D>),
    EtaReport { place: String, eta: Eta },
    Propose { place: String },
    Support { place: String, eta: Option<u32> },
    Oppose { place: String, reason: OpposeReason },
    Finalize { place: String },
    AskPose { target: String },
    AskEta { target: String, place: String },
    Arrived { place: String },
}

impl MessageKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            MessageKind::PoseReport(_) => "POSE",
            MessageKind::SentinelReport(_) => "SENTINEL",
            MessageKind::EtaReport { .. } => "ETA",
            MessageKind::Propose { .. } => "PROPOSE",
            MessageKind::Support { .. } => "SUPPORT",
            MessageKind::Oppose { .. } => "OPPOSE",
            MessageKind::Finalize { .. } => "FINALIZE",
            MessageKind::AskPose { .. } => "ASKPOSE",
            MessageKind::AskEta { .. } => "ASKETA",
            MessageKind::Arrived { .. } => "ARRIVED",
        }
    }
}

const KEYWORDS: [&str; 10] = [
    "POSE", "SENTINEL", "ETA", "PROPOSE", "SUPPORT", "OPPOSE", "FINALIZE", "ASKPOSE", "ASKETA",
    "ARRIVED",
];

/// One broadcast utterance. The free-text note is carried verbatim and
/// ignored by the analyzer.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub timestamp: u32,
    pub sender: String,
    pub kind: MessageKind,
    pub note: Option<String>,
}

impl Message {
    pub fn new(timestamp: u32, sender: impl Into<String>, kind: MessageKind) -> Self {
        Message {
            timestamp,
            sender: sender.into(),
            kind,
            note: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("column {column}: {reason}")]
    Malformed { column: usize, reason: String },
    #[error("column {column}: unknown place {name}")]
    UnknownPlace { column: usize, name: String },
}

fn quantize(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn fmt_pose(p: &Pose2D) -> String {
    match p.heading {
        Some(h) => format!("[{:.2},{:.2},{:.2}]", p.x, p.y, h),
        None => format!("[{:.2},{:.2}]", p.x, p.y),
    }
}

/// Round a pose to the wire's 2-decimal precision.
pub fn quantize_pose(p: Pose2D) -> Pose2D {
    Pose2D {
        x: quantize(p.x),
        y: quantize(p.y),
        heading: p.heading.map(quantize),
    }
}

/// Encode a message as a single line. Coordinates are rounded to two
/// decimals, so `parse(encode(m)) == m` holds on the quantized domain.
pub fn encode_message(m: &Message) -> String {
    let args = match &m.kind {
        MessageKind::PoseReport(p) => fmt_pose(p),
        MessageKind::SentinelReport(ps) => ps.iter().map(fmt_pose).collect::<Vec<_>>().join(" "),
        MessageKind::EtaReport { place, eta } => match eta {
            Eta::Seconds(s) => format!("<{place}> {s}"),
            Eta::Impossible => format!("<{place}> IMPOSSIBLE"),
        },
        MessageKind::Propose { place } => format!("<{place}>"),
        MessageKind::Support { place, eta } => match eta {
            Some(s) => format!("<{place}> ETA {s}"),
            None => format!("<{place}>"),
        },
        MessageKind::Oppose { place, reason } => format!("<{place}> {}", reason.keyword()),
        MessageKind::Finalize { place } => format!("<{place}>"),
        MessageKind::AskPose { target } => target.clone(),
        MessageKind::AskEta { target, place } => format!("{target} <{place}>"),
        MessageKind::Arrived { place } => format!("<{place}>"),
    };
    let mut line = format!("{} {} {}", m.timestamp, m.sender, m.kind.keyword());
    if !args.is_empty() {
        line.push(' ');
        line.push_str(&args);
    }
    if let Some(note) = &m.note {
        line.push_str(" # ");
        line.push_str(note);
    }
    line
}

struct Token {
    text: String,
    column: usize, // 1-based
}

/// Tokenize a line; `<...>` place names are single tokens that may contain
/// spaces, everything else splits on whitespace. `#` starts the note.
fn tokenize(line: &str) -> Result<(Vec<Token>, Option<String>), ParseError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let column = i + 1;
        if chars[i] == '#' {
            let note: String = chars[i + 1..].iter().collect::<String>().trim().to_string();
            return Ok((tokens, Some(note)));
        }
        if chars[i] == '<' {
            let mut j = i + 1;
            while j < chars.len() && chars[j] != '>' {
                j += 1;
            }
            if j == chars.len() {
                return Err(ParseError::Malformed {
                    column,
                    reason: "unterminated place name".into(),
                });
            }
            tokens.push(Token {
                text: chars[i..=j].iter().collect(),
                column,
            });
            i = j + 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        tokens.push(Token {
            text: chars[i..j].iter().collect(),
            column,
        });
        i = j;
    }
    Ok((tokens, None))
}

fn parse_coord(tok: &Token) -> Result<Pose2D, ParseError> {
    let t = &tok.text;
    if !(t.starts_with('[') && t.ends_with(']')) {
        return Err(ParseError::Malformed {
            column: tok.column,
            reason: format!("expected coordinate [x,y], got {t}"),
        });
    }
    let inner = &t[1..t.len() - 1];
    let parts: Vec<&str> = inner.split(',').collect();
    if parts.len() != 2 && parts.len() != 3 {
        return Err(ParseError::Malformed {
            column: tok.column,
            reason: "coordinate needs 2 or 3 components".into(),
        });
    }
    let mut vals = Vec::with_capacity(parts.len());
    for p in &parts {
        let v: f64 = p.parse().map_err(|_| ParseError::Malformed {
            column: tok.column,
            reason: format!("bad number {p}"),
        })?;
        if !v.is_finite() {
            return Err(ParseError::Malformed {
                column: tok.column,
                reason: "coordinates must be finite".into(),
            });
        }
        vals.push(v);
    }
    Ok(if vals.len() == 2 {
        Pose2D::point(vals[0], vals[1])
    } else {
        Pose2D::with_heading(vals[0], vals[1], vals[2])
    })
}

fn parse_place(tok: &Token, places: &BTreeSet<String>) -> Result<String, ParseError> {
    let t = &tok.text;
    if !(t.starts_with('<') && t.ends_with('>')) {
        return Err(ParseError::Malformed {
            column: tok.column,
            reason: format!("expected <Place Name>, got {t}"),
        });
    }
    let name = t[1..t.len() - 1].to_string();
    if !places.contains(&name) {
        return Err(ParseError::UnknownPlace {
            column: tok.column,
            name,
        });
    }
    Ok(name)
}

fn parse_u32(tok: &Token) -> Result<u32, ParseError> {
    tok.text.parse().map_err(|_| ParseError::Malformed {
        column: tok.column,
        reason: format!("expected integer, got {}", tok.text),
    })
}

/// Parse one line against the scene's place vocabulary. Every line either
/// parses or yields a positioned error; nothing is silently dropped.
pub fn parse_message(line: &str, places: &BTreeSet<String>) -> Result<Message, ParseError> {
    let (tokens, note) = tokenize(line)?;
    if tokens.is_empty() {
        return Err(ParseError::Malformed {
            column: 1,
            reason: "empty line".into(),
        });
    }
    let timestamp = parse_u32(&tokens[0])?;

    // the sender is every token up to the first keyword
    let kw_idx = tokens
        .iter()
        .position(|t| KEYWORDS.contains(&t.text.as_str()))
        .ok_or_else(|| ParseError::Malformed {
            column: tokens[0].column,
            reason: "no message kind keyword found".into(),
        })?;
    if kw_idx < 2 {
        return Err(ParseError::Malformed {
            column: tokens[kw_idx].column,
            reason: "missing sender name".into(),
        });
    }
    let sender = tokens[1..kw_idx]
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let kw = &tokens[kw_idx];
    let args = &tokens[kw_idx + 1..];
    let end_col = |args: &[Token]| args.last().map_or(kw.column, |t| t.column);

    let need = |n: usize| -> Result<(), ParseError> {
        if args.len() < n {
            Err(ParseError::Malformed {
                column: end_col(args),
                reason: format!("{} needs {n} argument(s)", kw.text),
            })
        } else {
            Ok(())
        }
    };
    let exact = |n: usize| -> Result<(), ParseError> {
        need(n)?;
        if args.len() > n {
            Err(ParseError::Malformed {
                column: args[n].column,
                reason: format!("unexpected trailing argument {}", args[n].text),
            })
        } else {
            Ok(())
        }
    };

    let kind = match kw.text.as_str() {
        "POSE" => {
            exact(1)?;
            MessageKind::PoseReport(parse_coord(&args[0])?)
        }
        "SENTINEL" => {
            need(1)?;
            let mut poses = Vec::with_capacity(args.len());
            for a in args {
                poses.push(parse_coord(a)?);
            }
            MessageKind::SentinelReport(poses)
        }
        "ETA" => {
            exact(2)?;
            let place = parse_place(&args[0], places)?;
            let eta = if args[1].text == "IMPOSSIBLE" {
                Eta::Impossible
            } else {
                Eta::Seconds(parse_u32(&args[1])?)
            };
            MessageKind::EtaReport { place, eta }
        }
        "PROPOSE" => {
            exact(1)?;
            MessageKind::Propose {
                place: parse_place(&args[0], places)?,
            }
        }
        "SUPPORT" => {
            need(1)?;
            let place = parse_place(&args[0], places)?;
            let eta = if args.len() == 1 {
                None
            } else {
                exact(3)?;
                if args[1].text != "ETA" {
                    return Err(ParseError::Malformed {
                        column: args[1].column,
                        reason: format!("expected ETA, got {}", args[1].text),
                    });
                }
                Some(parse_u32(&args[2])?)
            };
            MessageKind::Support { place, eta }
        }
        "OPPOSE" => {
            exact(2)?;
            let place = parse_place(&args[0], places)?;
            let reason =
                OpposeReason::from_keyword(&args[1].text).ok_or_else(|| ParseError::Malformed {
                    column: args[1].column,
                    reason: format!("unknown oppose reason {}", args[1].text),
                })?;
            MessageKind::Oppose { place, reason }
        }
        "FINALIZE" => {
            exact(1)?;
            MessageKind::Finalize {
                place: parse_place(&args[0], places)?,
            }
        }
        "ASKPOSE" => {
            need(1)?;
            let target = args.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
            MessageKind::AskPose { target }
        }
        "ASKETA" => {
            need(2)?;
            let place = parse_place(args.last().unwrap(), places)?;
            let target = args[..args.len() - 1]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            if target.is_empty() {
                return Err(ParseError::Malformed {
                    column: args[0].column,
                    reason: "ASKETA needs a target agent".into(),
                });
            }
            MessageKind::AskEta { target, place }
        }
        "ARRIVED" => {
            exact(1)?;
            MessageKind::Arrived {
                place: parse_place(&args[0], places)?,
            }
        }
        _ => unreachable!("keyword list checked above"),
    };

    Ok(Message {
        timestamp,
        sender,
        kind,
        note,
    })
}

/// Latest voiced stance of one agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stance {
    Undecided,
    Prefers(String),
    Opposes(String),
    Finalized(String),
    PresumedCaught,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Agreement {
    pub reached: bool,
    pub place: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpinionState {
    pub stances: BTreeMap<String, Stance>,
    pub agreement: Agreement,
    pub last_heard: BTreeMap<String, u32>,
}

impl OpinionState {
    pub fn presumed_caught(&self) -> Vec<&str> {
        self.stances
            .iter()
            .filter(|(_, s)| **s == Stance::PresumedCaught)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Distill the opinion state from an ordered transcript at time `now`.
///
/// Agreement is reached when every non-excluded agent has finalized the same
/// place, or when a finalization has stood unopposed for 5 seconds. A later
/// PROPOSE or OPPOSE reopens the discussion; the agreed place then falls back
/// to the currently most-supported one.
pub fn analyze_transcript(history: &[Message], roster: &[String], now: u32) -> OpinionState {
    let mut stances: BTreeMap<String, Stance> = roster
        .iter()
        .map(|n| (n.clone(), Stance::Undecided))
        .collect();
    let mut last_heard: BTreeMap<String, u32> = BTreeMap::new();
    // direct asks awaiting an answer: (ask ts, target)
    let mut open_asks: Vec<(u32, String)> = Vec::new();
    let mut last_finalize: Option<(u32, String)> = None;
    let mut last_reopen: u32 = 0; // ts of the latest PROPOSE/OPPOSE

    for m in history {
        last_heard.insert(m.sender.clone(), m.timestamp);
        open_asks.retain(|(ts, target)| !(target == &m.sender && m.timestamp > *ts));
        match &m.kind {
            MessageKind::Propose { place } | MessageKind::Support { place, .. } => {
                stances.insert(m.sender.clone(), Stance::Prefers(place.clone()));
                if matches!(m.kind, MessageKind::Propose { .. }) {
                    last_reopen = last_reopen.max(m.timestamp);
                }
            }
            MessageKind::Oppose { place, .. } => {
                stances.insert(m.sender.clone(), Stance::Opposes(place.clone()));
                last_reopen = last_reopen.max(m.timestamp);
            }
            MessageKind::Finalize { place } | MessageKind::Arrived { place } => {
                stances.insert(m.sender.clone(), Stance::Finalized(place.clone()));
                last_finalize = Some((m.timestamp, place.clone()));
            }
            MessageKind::AskPose { target } | MessageKind::AskEta { target, .. } => {
                open_asks.push((m.timestamp, target.clone()));
            }
            _ => {}
        }
    }

    // Silence exclusion: an unanswered direct ask, over 10 s old, while the
    // rest of the team kept talking.
    for (ask_ts, target) in &open_asks {
        if now.saturating_sub(*ask_ts) > SILENCE_EXCLUSION_SECS
            && roster.contains(target)
            && history
                .iter()
                .any(|m| m.timestamp > *ask_ts && &m.sender != target)
        {
            stances.insert(target.clone(), Stance::PresumedCaught);
        }
    }

    let active: Vec<&String> = roster
        .iter()
        .filter(|n| stances.get(*n) != Some(&Stance::PresumedCaught))
        .collect();

    // Rule 1: strict unanimity of finalizations.
    let unanimous = (!active.is_empty())
        .then(|| {
            let mut place: Option<&String> = None;
            for n in &active {
                match stances.get(*n) {
                    Some(Stance::Finalized(p)) => match place {
                        None => place = Some(p),
                        Some(q) if q == p => {}
                        _ => return None,
                    },
                    _ => return None,
                }
            }
            place.cloned()
        })
        .flatten();

    // Rule 2: a finalization with 5 s of no objections.
    let quiet = last_finalize.as_ref().and_then(|(ts, place)| {
        (now.saturating_sub(*ts) >= FINALIZE_QUIET_SECS && last_reopen <= *ts)
            .then(|| place.clone())
    });

    let agreement = if let Some(place) = unanimous.filter(|_| last_reopen <= last_finalize.as_ref().map_or(0, |(ts, _)| *ts)).or(quiet) {
        Agreement {
            reached: true,
            place: Some(place),
        }
    } else {
        Agreement {
            reached: false,
            place: most_supported(&stances),
        }
    };

    OpinionState {
        stances,
        agreement,
        last_heard,
    }
}

/// Plurality of current preferences and finalizations, ties by name.
fn most_supported(stances: &BTreeMap<String, Stance>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in stances.values() {
        if let Stance::Prefers(p) | Stance::Finalized(p) = s {
            *counts.entry(p.as_str()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(p, _)| p.to_string())
}

/// Spatial facts pulled from a transcript, most-recent report winning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpatialFacts {
    /// (agent, place) → latest ETA claim
    pub etas: BTreeMap<(String, String), (Eta, u32)>,
    pub agent_poses: BTreeMap<String, (Pose2D, u32)>,
    /// deduplicated by wire-precision position, latest timestamp kept
    pub sentinel_poses: Vec<(Pose2D, u32)>,
}

pub fn extract_spatial_facts(history: &[Message]) -> SpatialFacts {
    let mut facts = SpatialFacts::default();
    let mut sentinels: BTreeMap<(i64, i64), (Pose2D, u32)> = BTreeMap::new();
    for m in history {
        match &m.kind {
            MessageKind::EtaReport { place, eta } => {
                facts
                    .etas
                    .insert((m.sender.clone(), place.clone()), (*eta, m.timestamp));
            }
            MessageKind::Support {
                place,
                eta: Some(s),
            } => {
                facts.etas.insert(
                    (m.sender.clone(), place.clone()),
                    (Eta::Seconds(*s), m.timestamp),
                );
            }
            MessageKind::PoseReport(p) => {
                facts
                    .agent_poses
                    .insert(m.sender.clone(), (*p, m.timestamp));
            }
            MessageKind::SentinelReport(ps) => {
                for p in ps {
                    let key = ((p.x * 100.0).round() as i64, (p.y * 100.0).round() as i64);
                    sentinels.insert(key, (*p, m.timestamp));
                }
            }
            _ => {}
        }
    }
    facts.sentinel_poses = sentinels.into_values().collect();
    facts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn places() -> BTreeSet<String> {
        ["Pasque Garden", "Firehouse Museum", "Rowan Plaza"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn support_with_eta_parses() {
        let m = parse_message("540 Adam SUPPORT <Pasque Garden> ETA 471", &places()).unwrap();
        assert_eq!(m.timestamp, 540);
        assert_eq!(m.sender, "Adam");
        assert_eq!(
            m.kind,
            MessageKind::Support {
                place: "Pasque Garden".into(),
                eta: Some(471)
            }
        );
    }

    #[test]
    fn sentinel_report_parses() {
        let m = parse_message("1 Kate SENTINEL [-95.32,-44.21]", &places()).unwrap();
        assert_eq!(
            m.kind,
            MessageKind::SentinelReport(vec![Pose2D::point(-95.32, -44.21)])
        );
        let m = parse_message("2 Kate Novak SENTINEL [-95.32,-44.21,1.25] [3.00,4.00]", &places()).unwrap();
        assert_eq!(m.sender, "Kate Novak");
        match m.kind {
            MessageKind::SentinelReport(ps) => assert_eq!(ps.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_place_is_an_error_not_a_drop() {
        match parse_message("3 Bo PROPOSE <Nowhere Square>", &places()) {
            Err(ParseError::UnknownPlace { name, column }) => {
                assert_eq!(name, "Nowhere Square");
                assert!(column > 0);
            }
            other => panic!("expected UnknownPlace, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_carry_a_column() {
        for line in [
            "",
            "x",
            "5 PROPOSE <Pasque Garden>",
            "5 Bo FROBNICATE",
            "5 Bo POSE [1,2",
            "5 Bo POSE [1,2] [3,4]",
            "5 Bo SUPPORT <Pasque Garden> ETA",
            "5 Bo OPPOSE <Pasque Garden> BECAUSE",
        ] {
            match parse_message(line, &places()) {
                Err(ParseError::Malformed { column, .. }) => assert!(column >= 1, "{line}"),
                other => panic!("{line:?}: expected malformed, got {other:?}"),
            }
        }
    }

    #[test]
    fn note_survives_roundtrip() {
        let mut m = Message::new(
            7,
            "Ada Fontaine",
            MessageKind::Finalize {
                place: "Rowan Plaza".into(),
            },
        );
        m.note = Some("meeting before the deadline".into());
        let line = encode_message(&m);
        assert_eq!(parse_message(&line, &places()).unwrap(), m);
    }

    #[test]
    fn agreement_after_unanimous_finalize() {
        let roster: Vec<String> = ["Ada", "Bo", "Cal"].iter().map(|s| s.to_string()).collect();
        let p = "Firehouse Museum";
        let mut h = Vec::new();
        for (i, a) in roster.iter().enumerate() {
            h.push(Message::new(
                10 + i as u32,
                a.clone(),
                MessageKind::Support {
                    place: p.into(),
                    eta: Some(100 + i as u32),
                },
            ));
        }
        for (i, a) in roster.iter().enumerate() {
            h.push(Message::new(
                20 + i as u32,
                a.clone(),
                MessageKind::Finalize { place: p.into() },
            ));
        }
        let st = analyze_transcript(&h, &roster, 23);
        assert!(st.agreement.reached);
        assert_eq!(st.agreement.place.as_deref(), Some(p));
    }

    #[test]
    fn five_second_quiet_rule_finalizes() {
        let roster: Vec<String> = ["Ada", "Bo"].iter().map(|s| s.to_string()).collect();
        let h = vec![
            Message::new(1, "Ada", MessageKind::Support { place: "Rowan Plaza".into(), eta: None }),
            Message::new(2, "Bo", MessageKind::Finalize { place: "Rowan Plaza".into() }),
        ];
        let early = analyze_transcript(&h, &roster, 4);
        assert!(!early.agreement.reached, "not yet quiet for 5 s");
        let late = analyze_transcript(&h, &roster, 7);
        assert!(late.agreement.reached);
        assert_eq!(late.agreement.place.as_deref(), Some("Rowan Plaza"));
    }

    #[test]
    fn reopening_flips_agreement_to_false() {
        let roster: Vec<String> = ["Ada", "Bo"].iter().map(|s| s.to_string()).collect();
        let mut h = vec![
            Message::new(1, "Ada", MessageKind::Finalize { place: "Rowan Plaza".into() }),
            Message::new(2, "Bo", MessageKind::Finalize { place: "Rowan Plaza".into() }),
        ];
        assert!(analyze_transcript(&h, &roster, 8).agreement.reached);
        h.push(Message::new(
            30,
            "Ada",
            MessageKind::Oppose {
                place: "Rowan Plaza".into(),
                reason: OpposeReason::EtaDegraded,
            },
        ));
        let st = analyze_transcript(&h, &roster, 31);
        assert!(!st.agreement.reached);
        // Bo still holds the finalized place, so it stays most-supported
        assert_eq!(st.agreement.place.as_deref(), Some("Rowan Plaza"));
    }

    #[test]
    fn info_only_messages_preserve_agreement() {
        let roster: Vec<String> = ["Ada", "Bo"].iter().map(|s| s.to_string()).collect();
        let h = vec![
            Message::new(1, "Ada", MessageKind::Finalize { place: "Rowan Plaza".into() }),
            Message::new(2, "Bo", MessageKind::Finalize { place: "Rowan Plaza".into() }),
            Message::new(9, "Ada", MessageKind::PoseReport(Pose2D::point(1.0, 2.0))),
            Message::new(
                10,
                "Bo",
                MessageKind::SentinelReport(vec![Pose2D::point(5.0, 5.0)]),
            ),
        ];
        assert!(analyze_transcript(&h, &roster, 11).agreement.reached);
    }

    #[test]
    fn silent_agent_presumed_caught_after_direct_ask() {
        let roster: Vec<String> = ["Ada", "Bo", "Cal"].iter().map(|s| s.to_string()).collect();
        let mut h = vec![
            Message::new(5, "Ada", MessageKind::AskPose { target: "Cal".into() }),
            Message::new(8, "Bo", MessageKind::PoseReport(Pose2D::point(0.0, 0.0))),
        ];
        let st = analyze_transcript(&h, &roster, 18);
        assert_eq!(st.stances["Cal"], Stance::PresumedCaught);

        // answering clears the presumption
        h.push(Message::new(9, "Cal", MessageKind::PoseReport(Pose2D::point(1.0, 1.0))));
        let st = analyze_transcript(&h, &roster, 30);
        assert_ne!(st.stances["Cal"], Stance::PresumedCaught);
    }

    #[test]
    fn silence_without_an_ask_never_excludes() {
        let roster: Vec<String> = ["Ada", "Bo"].iter().map(|s| s.to_string()).collect();
        let h = vec![Message::new(
            1,
            "Ada",
            MessageKind::PoseReport(Pose2D::point(0.0, 0.0)),
        )];
        let st = analyze_transcript(&h, &roster, 500);
        assert_eq!(st.stances["Bo"], Stance::Undecided);
    }

    #[test]
    fn facts_keep_the_most_recent_entry() {
        let h = vec![
            Message::new(
                10,
                "Ada",
                MessageKind::EtaReport { place: "Pasque Garden".into(), eta: Eta::Seconds(300) },
            ),
            Message::new(
                20,
                "Ada",
                MessageKind::EtaReport { place: "Pasque Garden".into(), eta: Eta::Seconds(450) },
            ),
            Message::new(5, "Bo", MessageKind::PoseReport(Pose2D::point(1.0, 1.0))),
            Message::new(6, "Bo", MessageKind::PoseReport(Pose2D::point(2.0, 2.0))),
            Message::new(
                7,
                "Cal",
                MessageKind::EtaReport { place: "Rowan Plaza".into(), eta: Eta::Impossible },
            ),
        ];
        let f = extract_spatial_facts(&h);
        assert_eq!(
            f.etas[&("Ada".to_string(), "Pasque Garden".to_string())],
            (Eta::Seconds(450), 20)
        );
        assert_eq!(f.agent_poses["Bo"].0, Pose2D::point(2.0, 2.0));
        assert_eq!(
            f.etas[&("Cal".to_string(), "Rowan Plaza".to_string())].0,
            Eta::Impossible
        );
        assert!(extract_spatial_facts(&[]).etas.is_empty());
    }

    #[test]
    fn prefix_consistency() {
        let roster: Vec<String> = ["Ada", "Bo"].iter().map(|s| s.to_string()).collect();
        let h = vec![
            Message::new(1, "Ada", MessageKind::Propose { place: "Rowan Plaza".into() }),
            Message::new(2, "Bo", MessageKind::Support { place: "Rowan Plaza".into(), eta: None }),
            Message::new(3, "Ada", MessageKind::Finalize { place: "Rowan Plaza".into() }),
        ];
        for k in 0..=h.len() {
            let a = analyze_transcript(&h[..k], &roster, 4);
            let b = analyze_transcript(&h[..k], &roster, 4);
            assert_eq!(a, b);
        }
    }
}
