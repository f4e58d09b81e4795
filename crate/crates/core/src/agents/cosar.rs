//! The cooperative spatial-reasoning agent: spatial memory, a deterministic
//! reasoner cascade over the message protocol, and hazard-aware navigation.
//!
//! The reasoner runs only when a trigger fires (new messages, a newly
//! observed sentinel, an agreement flip, or 120 s since the last run) and
//! picks exactly one plan per invocation, in priority order: report
//! sentinels, reopen on ETA degradation, answer questions, ask for missing
//! poses, query missing ETAs, navigate once agreement holds, then drive the
//! vote with propose/support/finalize.

use super::{AgentPolicy, Decision, PolicyEnv};
use crate::geom::Vec2;
use crate::memory::{select_meeting_place, SpatialMemory};
use crate::nav::{refine_route, DangerPrunedRefiner, NavInputs, NavStep, Navigator, DEFAULT_RETRY_LIMIT};
use crate::protocol::{
    analyze_transcript, extract_spatial_facts, quantize_pose, Eta, Message, MessageKind,
    OpinionState, OpposeReason, Stance,
};
use crate::scene::{Place, SceneSpec};
use crate::world::{AgentAction, MapQuery, MapQueryResult, Observation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Reopen the discussion when the committed-route ETA worsens by more than
/// this many seconds against an earlier sample.
pub const ETA_DEGRADATION_THRESHOLD: u32 = 600;
/// A direct question is considered outstanding for this long.
const ASK_EXPIRY: u32 = 10;
/// Identical utterances within this window are suppressed.
const REPEAT_WINDOW: u32 = 10;
/// A sentinel sighting matching a broadcast pose within this distance does
/// not count as new.
const REPORT_MATCH_RADIUS: f64 = 10.0;
/// Zones within this range of the agent's own position do not make a place
/// "impossible": the agent can slip out of its local bubble.
const ROUTING_EXEMPT_RADIUS: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Idle,
    Navigating,
    Arrived,
}

#[derive(Debug, Clone)]
enum PendingQuery {
    EtaRoute { place: String },
    PlaceMeta,
}

#[derive(Debug, Clone)]
enum InboxAsk {
    Pose,
    Eta { place: String },
}

pub struct CosarPolicy {
    me: String,
    rng: ChaCha8Rng,
    mem: SpatialMemory,
    nav: Navigator,
    known_places: BTreeMap<String, Place>,
    history: Vec<Message>,
    opinions: OpinionState,
    prev_reached: bool,
    mode: Mode,
    signaled_place: Option<String>,
    last_reasoner: Option<u32>,
    pending: VecDeque<MessageKind>,
    pending_query: Option<PendingQuery>,
    inbox_asks: VecDeque<(u32, InboxAsk)>,
    asks_out: BTreeMap<String, u32>,
    reported_sentinels: Vec<Vec2>,
    shared_pose: bool,
    supported_eta: BTreeMap<String, u32>,
    degradation_latched: bool,
    last_spoken: BTreeMap<String, u32>,
    initialized: bool,
    self_speed: f64,
    safe_eta_checked_version: u64,
    reasoner_runs: u32,
}

impl CosarPolicy {
    pub fn new(scene: &SceneSpec, agent_index: usize, seed: u64) -> Self {
        let spec = &scene.agent_roster[agent_index];
        let known_places = spec
            .known_places
            .iter()
            .filter_map(|n| scene.place(n).map(|p| (n.clone(), p.clone())))
            .collect();
        CosarPolicy {
            me: spec.name.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            mem: SpatialMemory::for_scene(scene),
            nav: Navigator::new(true),
            known_places,
            history: Vec::new(),
            opinions: OpinionState {
                stances: BTreeMap::new(),
                agreement: Default::default(),
                last_heard: BTreeMap::new(),
            },
            prev_reached: false,
            mode: Mode::Idle,
            signaled_place: None,
            last_reasoner: None,
            pending: VecDeque::new(),
            pending_query: None,
            inbox_asks: VecDeque::new(),
            asks_out: BTreeMap::new(),
            reported_sentinels: Vec::new(),
            shared_pose: false,
            supported_eta: BTreeMap::new(),
            degradation_latched: false,
            last_spoken: BTreeMap::new(),
            initialized: false,
            self_speed: 1.0,
            safe_eta_checked_version: 0,
            reasoner_runs: 0,
        }
    }

    fn roster_names(&self, env: &PolicyEnv) -> Vec<String> {
        env.roster.iter().map(|a| a.name.clone()).collect()
    }

    /// Roster minus self and presumed-caught agents.
    fn active_peers(&self, env: &PolicyEnv) -> Vec<String> {
        env.roster
            .iter()
            .map(|a| a.name.clone())
            .filter(|n| {
                *n != self.me && self.opinions.stances.get(n) != Some(&Stance::PresumedCaught)
            })
            .collect()
    }

    fn active_agents(&self, env: &PolicyEnv) -> Vec<String> {
        env.roster
            .iter()
            .map(|a| a.name.clone())
            .filter(|n| self.opinions.stances.get(n) != Some(&Stance::PresumedCaught))
            .collect()
    }

    fn my_eta(&self, place: &str) -> Option<Eta> {
        self.mem.etas.get(place, &self.me).map(|e| e.value)
    }

    fn my_stance(&self) -> Stance {
        self.opinions
            .stances
            .get(&self.me)
            .cloned()
            .unwrap_or(Stance::Undecided)
    }

    /// Suppress near-duplicate utterances, then wrap the kind in a Speak.
    fn speak(&mut self, now: u32, kind: MessageKind, note: &str) -> Option<Decision> {
        let key = match &kind {
            MessageKind::PoseReport(_) => "POSE".to_string(),
            MessageKind::SentinelReport(_) => return Some(self.speak_unchecked(now, kind, note)),
            MessageKind::EtaReport { place, .. } => format!("ETA {place}"),
            MessageKind::Propose { place } => format!("PROPOSE {place}"),
            MessageKind::Support { place, .. } => format!("SUPPORT {place}"),
            MessageKind::Oppose { place, .. } => format!("OPPOSE {place}"),
            MessageKind::Finalize { place } => format!("FINALIZE {place}"),
            MessageKind::AskPose { target } => format!("ASKPOSE {target}"),
            MessageKind::AskEta { target, place } => format!("ASKETA {target} {place}"),
            MessageKind::Arrived { place } => format!("ARRIVED {place}"),
        };
        match self.last_spoken.get(&key) {
            Some(ts) if now.saturating_sub(*ts) < REPEAT_WINDOW => None,
            _ => {
                self.last_spoken.insert(key, now);
                Some(self.speak_unchecked(now, kind, note))
            }
        }
    }

    fn speak_unchecked(&mut self, now: u32, kind: MessageKind, note: &str) -> Decision {
        let msg = Message::new(now, self.me.clone(), kind);
        Decision::noted(AgentAction::Speak(msg), format!("say: {note}"))
    }

    /// Estimated min-max candidate over my known places: exact ETA-map
    /// entries where available (own or reported by peers), straight-line
    /// over speed everywhere else. Requires every active peer's pose.
    fn estimated_best(
        &self,
        env: &PolicyEnv,
        my_pos: Vec2,
        exclude: Option<&str>,
    ) -> Option<String> {
        let agents = self.active_agents(env);
        let speeds: BTreeMap<&str, f64> =
            env.roster.iter().map(|a| (a.name.as_str(), a.speed)).collect();
        let mut poses: BTreeMap<&str, Vec2> = BTreeMap::new();
        for name in &agents {
            if *name == self.me {
                poses.insert(name, my_pos);
            } else {
                poses.insert(name, self.mem.registry.agent(name)?.0.pos());
            }
        }
        let mut best: Option<(f64, &str)> = None;
        for (name, place) in &self.known_places {
            if exclude == Some(name.as_str()) {
                continue;
            }
            let mut worst = 0.0f64;
            let mut feasible = true;
            for agent in &agents {
                let est = match self.mem.etas.get(name, agent).map(|e| e.value) {
                    Some(Eta::Seconds(s)) => s as f64,
                    Some(Eta::Impossible) => {
                        feasible = false;
                        break;
                    }
                    None => {
                        place.location.pos().distance(poses[agent.as_str()])
                            / speeds[agent.as_str()]
                    }
                };
                worst = worst.max(est);
            }
            if feasible && best.map_or(true, |(w, _)| worst < w) {
                best = Some((worst, name));
            }
        }
        best.map(|(_, n)| n.to_string())
    }

    /// Alternative to a rejected place: exact min-max over the ETA map when
    /// the winning row is complete, the pose-based estimate otherwise.
    fn best_alternative(
        &self,
        env: &PolicyEnv,
        my_pos: Vec2,
        exclude: &str,
    ) -> Option<String> {
        let agents = self.active_agents(env);
        let candidates: BTreeSet<String> = self
            .known_places
            .keys()
            .filter(|n| n.as_str() != exclude)
            .cloned()
            .collect();
        if let Ok((place, _)) = select_meeting_place(&self.mem.etas, &candidates, &agents) {
            let full_row = agents.iter().all(|a| {
                matches!(
                    self.mem.etas.get(&place, a).map(|e| e.value),
                    Some(Eta::Seconds(_))
                )
            });
            if full_row {
                return Some(place);
            }
        }
        self.estimated_best(env, my_pos, Some(exclude))
    }

    /// Places under discussion, the live proposal first.
    fn considered_places(&self) -> Vec<String> {
        let mut rest = BTreeSet::new();
        for m in &self.history {
            match &m.kind {
                MessageKind::Propose { place }
                | MessageKind::Support { place, .. }
                | MessageKind::Oppose { place, .. }
                | MessageKind::Finalize { place }
                | MessageKind::AskEta { place, .. } => {
                    rest.insert(place.clone());
                }
                _ => {}
            }
        }
        let mut out = Vec::new();
        if let Some(live) = &self.opinions.agreement.place {
            out.push(live.clone());
            rest.remove(live);
        }
        out.extend(rest);
        out
    }

    fn remaining_route_eta(&self, pose: Vec2, speed: f64) -> Option<u32> {
        let route = self.mem.plan.reference_route.as_ref()?;
        let cursor = self.nav.route_cursor().min(route.waypoints.len());
        let mut len = if cursor < route.waypoints.len() {
            pose.distance(route.waypoints[cursor].pos())
        } else {
            0.0
        };
        for pair in route.waypoints[cursor.min(route.waypoints.len())..].windows(2) {
            len += pair[0].distance(&pair[1]);
        }
        Some((len / speed).ceil() as u32)
    }

    /// Commit to a place: build a danger-aware route and start walking.
    fn commit_and_navigate(
        &mut self,
        obs: &Observation,
        env: &PolicyEnv,
        place_name: &str,
        mut notes: Vec<String>,
    ) -> Decision {
        let now = obs.clock;
        let Some(place) = self.known_places.get(place_name).cloned() else {
            // agreed on a place without metadata: fetch it first
            self.pending_query = Some(PendingQuery::PlaceMeta);
            return Decision::noted(
                AgentAction::QueryMap(MapQuery::Place(place_name.to_string())),
                format!("need metadata for <{place_name}> before walking"),
            );
        };
        let centers = self.mem.occupancy.danger_centers();
        match refine_route(
            env.graph,
            &centers,
            obs.self_pose.pos(),
            place.location.pos(),
            DEFAULT_RETRY_LIMIT,
            &DangerPrunedRefiner,
        ) {
            Ok(route) => {
                notes.push(format!("navigating to <{place_name}>"));
                self.mem.plan.commit(place_name.to_string(), route);
                self.nav.reset_route();
                self.mode = Mode::Navigating;
                self.degradation_latched = false;
                let mut d = self.navigate(obs, env);
                d.notes.splice(0..0, notes);
                d
            }
            Err(_) => {
                self.mem
                    .etas
                    .update(place_name, &self.me, Eta::Impossible, now);
                self.pending.push_back(MessageKind::EtaReport {
                    place: place_name.to_string(),
                    eta: Eta::Impossible,
                });
                self.speak(
                    now,
                    MessageKind::Oppose {
                        place: place_name.to_string(),
                        reason: OpposeReason::Impossible,
                    },
                    "no route to the agreed place",
                )
                .unwrap_or_else(|| Decision::act(AgentAction::Wait))
            }
        }
    }

    /// One navigation step, including emergency handling and arrival.
    fn navigate(&mut self, obs: &Observation, env: &PolicyEnv) -> Decision {
        let pos = obs.self_pose.pos();
        let sightings: Vec<crate::geom::Pose2D> =
            obs.visible_sentinels.iter().map(|s| s.pose).collect();
        let mut ctx = NavInputs {
            graph: env.graph,
            pose: pos,
            speed: env.me().speed,
            warned: !obs.warnings.is_empty(),
            visible_sentinels: &sightings,
            rng: &mut self.rng,
        };
        let out = self.nav.step(&mut ctx, &mut self.mem);
        let notes = out.notes;
        match out.step {
            NavStep::Move(v) => Decision {
                action: AgentAction::Move(v),
                notes,
            },
            NavStep::Arrived => {
                let Some(place_name) = self.mem.plan.place.clone() else {
                    return Decision {
                        action: AgentAction::Wait,
                        notes,
                    };
                };
                let inside = self
                    .known_places
                    .get(&place_name)
                    .map(|p| p.bounding_box.contains(pos))
                    .unwrap_or(false);
                if inside {
                    if self.signaled_place.as_deref() != Some(place_name.as_str()) {
                        self.signaled_place = Some(place_name.clone());
                        self.mode = Mode::Arrived;
                        self.pending.push_back(MessageKind::Arrived {
                            place: place_name.clone(),
                        });
                        return Decision {
                            action: AgentAction::SignalComplete(place_name),
                            notes,
                        };
                    }
                    self.mode = Mode::Arrived;
                    Decision {
                        action: AgentAction::Wait,
                        notes,
                    }
                } else if let Some(p) = self.known_places.get(&place_name) {
                    Decision {
                        action: AgentAction::Move((p.location.pos() - pos).clamp_norm(env.me().speed)),
                        notes,
                    }
                } else {
                    Decision {
                        action: AgentAction::Wait,
                        notes,
                    }
                }
            }
            NavStep::Blocked => Decision {
                action: AgentAction::Wait,
                notes,
            },
        }
    }

    fn ingest_messages(&mut self, obs: &Observation) {
        if obs.messages.is_empty() {
            return;
        }
        let facts = extract_spatial_facts(&obs.messages);
        self.mem.update_pose_registry(&facts, obs.self_pose.pos());
        self.mem.update_eta_map(&facts);
        for (pose, _) in &facts.sentinel_poses {
            let p = pose.pos();
            if self
                .reported_sentinels
                .iter()
                .all(|r| r.distance(p) > 1e-6)
            {
                self.reported_sentinels.push(p);
            }
        }
        for m in &obs.messages {
            match &m.kind {
                MessageKind::AskPose { target } => {
                    if *target == self.me {
                        self.inbox_asks.push_back((m.timestamp, InboxAsk::Pose));
                    } else if !self.shared_pose && m.sender != self.me {
                        // an opening "where is everyone" round: answer too
                        self.inbox_asks.push_back((m.timestamp, InboxAsk::Pose));
                    }
                }
                MessageKind::AskEta { target, place } if *target == self.me => {
                    self.inbox_asks
                        .push_back((m.timestamp, InboxAsk::Eta { place: place.clone() }));
                }
                _ => {}
            }
            if m.sender == self.me {
                if let MessageKind::PoseReport(_) = m.kind {
                    self.shared_pose = true;
                }
            }
        }
        self.history.extend(obs.messages.iter().cloned());
    }

    fn ingest_map_reply(&mut self, obs: &Observation, env: &PolicyEnv) {
        let Some(reply) = &obs.map_reply else { return };
        let Some(pq) = self.pending_query.take() else { return };
        let now = obs.clock;
        match (pq, reply) {
            (PendingQuery::EtaRoute { place }, MapQueryResult::Route(result)) => {
                let live = self.opinions.agreement.place.as_deref() == Some(place.as_str());
                // the usable travel time accounts for known danger zones:
                // a detour lengthens it, an unavoidable zone makes the place
                // impossible (matching how agents oppose unreachable spots)
                let eta = match result {
                    Ok(route) => {
                        let dest = route.destination().unwrap_or(obs.self_pose.pos());
                        self.danger_aware_eta(env, obs.self_pose.pos(), dest)
                    }
                    Err(_) => Eta::Impossible,
                };
                self.mem.etas.update(&place, &self.me.clone(), eta, now);
                if !live || eta == Eta::Impossible {
                    self.pending.push_back(MessageKind::EtaReport { place, eta });
                }
            }
            (PendingQuery::PlaceMeta, MapQueryResult::Place(Ok(place))) => {
                self.known_places.insert(place.name.clone(), place.clone());
            }
            _ => {}
        }
    }

    /// Travel time along a zone-avoiding route; Impossible when every way
    /// through crosses a known danger zone. Zones close to the agent's own
    /// position are exempt from the verdict: escaping the local bubble is
    /// the emergency system's job and must not mark every place unreachable.
    fn danger_aware_eta(&self, env: &PolicyEnv, from: Vec2, to: Vec2) -> Eta {
        let centers: Vec<Vec2> = self
            .mem
            .occupancy
            .danger_centers()
            .into_iter()
            .filter(|c| c.distance(from) > ROUTING_EXEMPT_RADIUS)
            .collect();
        match refine_route(env.graph, &centers, from, to, DEFAULT_RETRY_LIMIT, &DangerPrunedRefiner)
        {
            Ok(route) => {
                if crate::nav::assess_route_safety(&route, &centers, crate::memory::DANGER_RADIUS)
                    .safe
                {
                    Eta::Seconds((route.length / self.speed_of_self()).ceil() as u32)
                } else {
                    Eta::Impossible
                }
            }
            Err(_) => Eta::Impossible,
        }
    }

    fn speed_of_self(&self) -> f64 {
        self.self_speed
    }

    /// How many times the reasoner cascade has been invoked.
    pub fn reasoner_runs(&self) -> u32 {
        self.reasoner_runs
    }

    /// The reasoner cascade. Returns None when nothing needs saying/doing,
    /// letting the caller fall through to route following.
    fn cascade(&mut self, obs: &Observation, env: &PolicyEnv) -> Option<Decision> {
        let now = obs.clock;
        let my_pos = obs.self_pose.pos();

        // (a) unreported sentinel sightings always go out first
        let mut unreported: Vec<crate::geom::Pose2D> = Vec::new();
        for s in &obs.visible_sentinels {
            let p = s.pose.pos();
            if self
                .reported_sentinels
                .iter()
                .all(|r| r.distance(p) > REPORT_MATCH_RADIUS)
            {
                self.reported_sentinels.push(p);
                unreported.push(quantize_pose(s.pose));
            }
        }
        if !unreported.is_empty() {
            unreported.truncate(5);
            return Some(self.speak_unchecked(
                now,
                MessageKind::SentinelReport(unreported),
                "reporting sentinels",
            ));
        }

        // (b) own ETA on the committed route degraded, or the place has
        // become unreachable through the known zones: reopen the discussion
        if self.mode == Mode::Navigating && self.mem.plan.committed && !self.degradation_latched {
            if let (Some(place), Some(current)) = (
                self.mem.plan.place.clone(),
                self.remaining_route_eta(my_pos, self.self_speed),
            ) {
                let earlier_best = self.mem.plan.eta_history.iter().map(|(_, e)| *e).min();
                let degraded = earlier_best
                    .map_or(false, |e| current > e.saturating_add(ETA_DEGRADATION_THRESHOLD));
                let misses_deadline = now.saturating_add(current) > env.horizon;
                let version = self.mem.occupancy.danger_version();
                let cut_off = if version != self.safe_eta_checked_version {
                    self.safe_eta_checked_version = version;
                    self.known_places.get(&place).map_or(false, |meta| {
                        self.danger_aware_eta(env, my_pos, meta.location.pos()) == Eta::Impossible
                    })
                } else {
                    false
                };
                if degraded || misses_deadline || cut_off {
                    self.degradation_latched = true;
                    let eta = if cut_off { Eta::Impossible } else { Eta::Seconds(current) };
                    self.mem.etas.update(&place, &self.me.clone(), eta, now);
                    self.pending.push_back(MessageKind::EtaReport {
                        place: place.clone(),
                        eta,
                    });
                    if let Some(alt) = self.best_alternative(env, my_pos, &place) {
                        self.pending.push_back(MessageKind::Propose { place: alt });
                    }
                    let reason = if cut_off {
                        OpposeReason::Impossible
                    } else {
                        OpposeReason::EtaDegraded
                    };
                    if let Some(d) = self.speak(
                        now,
                        MessageKind::Oppose { place, reason },
                        "committed route no longer works, reopening",
                    ) {
                        return Some(d);
                    }
                }
            }
        }

        // answer direct questions before asking anything ourselves
        while let Some((_, ask)) = self.inbox_asks.pop_front() {
            match ask {
                InboxAsk::Pose => {
                    let kind = MessageKind::PoseReport(quantize_pose(obs.self_pose));
                    if let Some(d) = self.speak(now, kind, "sharing my position") {
                        self.shared_pose = true;
                        return Some(d);
                    }
                }
                InboxAsk::Eta { place } => match self.my_eta(&place) {
                    Some(eta) => {
                        let kind = MessageKind::EtaReport { place, eta };
                        if let Some(d) = self.speak(now, kind, "answering an ETA question") {
                            return Some(d);
                        }
                    }
                    None => {
                        if let Some(d) = self.query_eta(obs, &place) {
                            return Some(d);
                        }
                    }
                },
            }
        }

        // queued follow-ups (reports, proposals after an oppose, arrivals)
        while let Some(kind) = self.pending.pop_front() {
            if let Some(d) = self.speak(now, kind, "queued follow-up") {
                return Some(d);
            }
        }

        let reached = self.opinions.agreement.reached;
        let agreed = self.opinions.agreement.place.clone();

        // (e) agreement reached: go
        if reached {
            if let Some(place) = agreed {
                let already = self.mode != Mode::Idle && self.mem.plan.place.as_deref() == Some(place.as_str());
                if !already {
                    return Some(self.commit_and_navigate(obs, env, &place, vec![format!("agreement on <{place}>")]));
                }
            }
            return None;
        }

        // (c) ask for poses we miss (negotiation needs everyone located)
        for peer in self.active_peers(env) {
            if self.mem.registry.agent(&peer).is_some() {
                continue;
            }
            let outstanding = self
                .asks_out
                .get(&peer)
                .map_or(false, |ts| now.saturating_sub(*ts) <= ASK_EXPIRY);
            if outstanding {
                continue;
            }
            if !self.shared_pose {
                self.pending
                    .push_back(MessageKind::PoseReport(quantize_pose(obs.self_pose)));
                self.shared_pose = true;
            }
            if let Some(d) = self.speak(
                now,
                MessageKind::AskPose { target: peer.clone() },
                "need a teammate position",
            ) {
                self.asks_out.insert(peer, now);
                return Some(d);
            }
        }

        // (d) query our own ETA for places under discussion
        if self.pending_query.is_none() {
            for place in self.considered_places() {
                if self.my_eta(&place).is_some() {
                    continue;
                }
                if let Some(d) = self.query_eta(obs, &place) {
                    return Some(d);
                }
            }
        }

        // (f) drive the vote
        let live = agreed;
        match live {
            None => {
                if let Some(best) = self.estimated_best(env, my_pos, None) {
                    if let Some(d) = self.speak(
                        now,
                        MessageKind::Propose { place: best.clone() },
                        "proposing the estimated min-max place",
                    ) {
                        return Some(d);
                    }
                }
                None
            }
            Some(live) => {
                let eta = self.my_eta(&live)?;
                let infeasible = match eta {
                    Eta::Impossible => Some((OpposeReason::Impossible, Eta::Impossible)),
                    Eta::Seconds(s) if now.saturating_add(s) > env.horizon => {
                        Some((OpposeReason::TooFar, Eta::Seconds(s)))
                    }
                    _ => None,
                };
                if let Some((reason, eta)) = infeasible {
                    if !matches!(self.my_stance(), Stance::Opposes(p) if p == live) {
                        self.pending.push_back(MessageKind::EtaReport {
                            place: live.clone(),
                            eta,
                        });
                        if let Some(alt) = self.best_alternative(env, my_pos, &live) {
                            self.pending.push_back(MessageKind::Propose { place: alt });
                        }
                        return self.speak(
                            now,
                            MessageKind::Oppose { place: live, reason },
                            "the live proposal does not work for me",
                        );
                    }
                    return None;
                }
                let Eta::Seconds(secs) = eta else { return None };
                if self.supported_eta.get(&live) != Some(&secs) {
                    if let Some(d) = self.speak(
                        now,
                        MessageKind::Support {
                            place: live.clone(),
                            eta: Some(secs),
                        },
                        "supporting the live proposal",
                    ) {
                        self.supported_eta.insert(live, secs);
                        return Some(d);
                    }
                    return None;
                }
                // finalize once the whole active team prefers the same place
                let everyone_on_board = self.active_agents(env).iter().all(|n| {
                    matches!(
                        self.opinions.stances.get(n),
                        Some(Stance::Prefers(p)) | Some(Stance::Finalized(p)) if *p == live
                    )
                });
                if everyone_on_board && !matches!(self.my_stance(), Stance::Finalized(p) if p == live)
                {
                    return self.speak(
                        now,
                        MessageKind::Finalize { place: live },
                        "team aligned, finalizing",
                    );
                }
                None
            }
        }
    }

    fn query_eta(&mut self, obs: &Observation, place: &str) -> Option<Decision> {
        if self.pending_query.is_some() {
            return None;
        }
        if let Some(meta) = self.known_places.get(place) {
            self.pending_query = Some(PendingQuery::EtaRoute {
                place: place.to_string(),
            });
            Some(Decision::noted(
                AgentAction::QueryMap(MapQuery::Route(obs.self_pose, meta.location)),
                format!("querying my route to <{place}>"),
            ))
        } else {
            self.pending_query = Some(PendingQuery::PlaceMeta);
            Some(Decision::noted(
                AgentAction::QueryMap(MapQuery::Place(place.to_string())),
                format!("querying metadata for <{place}>"),
            ))
        }
    }
}

impl AgentPolicy for CosarPolicy {
    fn decide(&mut self, obs: &Observation, env: &PolicyEnv) -> Decision {
        if !obs.alive {
            return Decision::act(AgentAction::Wait);
        }
        let now = obs.clock;
        self.self_speed = env.me().speed;
        if !self.initialized {
            self.initialized = true;
            self.opinions = analyze_transcript(&[], &self.roster_names(env), now);
        }

        // perception first
        let sightings: Vec<Vec2> = obs.visible_sentinels.iter().map(|s| s.pose.pos()).collect();
        self.mem
            .integrate_observation(&env.scene.coarse_obstacle_grid, obs.self_pose.pos(), &sightings);
        self.ingest_messages(obs);
        self.ingest_map_reply(obs, env);
        self.opinions = analyze_transcript(&self.history, &self.roster_names(env), now);

        // sample our own ETA on the committed route every 120 s
        if self.mode == Mode::Navigating && self.mem.plan.committed {
            if let Some(eta) = self.remaining_route_eta(obs.self_pose.pos(), self.self_speed) {
                self.mem.plan.sample_eta(now, eta);
            }
        }

        // the emergency layer preempts everything else
        let threat_near = !obs.indoor
            && obs
                .visible_sentinels
                .iter()
                .any(|s| crate::nav::threat_imminent(&s.pose, obs.self_pose.pos()));
        if self.nav.commitment.is_some() || !obs.warnings.is_empty() || threat_near {
            return self.navigate(obs, env);
        }

        // leaving Arrived when the agreement reopens on a different place
        if self.mode == Mode::Arrived
            && !self.opinions.agreement.reached
            && self.opinions.agreement.place != self.mem.plan.place
        {
            self.mode = Mode::Idle;
        }

        let reached_flip = self.opinions.agreement.reached != self.prev_reached;
        self.prev_reached = self.opinions.agreement.reached;
        let triggered = !obs.messages.is_empty()
            || obs.map_reply.is_some()
            || reached_flip
            || self.last_reasoner.is_none()
            || now.saturating_sub(self.last_reasoner.unwrap_or(0)) >= 120
            || obs.visible_sentinels.iter().any(|s| {
                let p = s.pose.pos();
                self.reported_sentinels
                    .iter()
                    .all(|r| r.distance(p) > REPORT_MATCH_RADIUS)
            });
        if triggered {
            self.last_reasoner = Some(now);
            self.reasoner_runs += 1;
            if let Some(decision) = self.cascade(obs, env) {
                return decision;
            }
        }

        match self.mode {
            Mode::Navigating => self.navigate(obs, env),
            Mode::Idle | Mode::Arrived => Decision::act(AgentAction::Wait),
        }
    }
}
