//! In-process session run on a virtual millisecond clock.
//!
//! A [`Hub`], a [`HeadsetSim`] and a scripted researcher exchange encoded
//! protocol text through a simulated link with a fixed one-way delay. The
//! headset's local clock can be skewed against the server's. Everything is
//! deterministic.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::hub::{Hub, Outbound, PeerId};
use crate::protocol::{decode, encode, Message, Role, PROTOCOL_VERSION};
use crate::session::{Command, SessionState};
use crate::sim::HeadsetSim;

pub const HEADSET_PEER: PeerId = 1;
pub const RESEARCHER_PEER: PeerId = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopbackConfig {
    /// One-way link delay in both directions.
    pub link_delay_ms: i64,
    /// Headset local clock minus server clock.
    pub headset_skew_ms: i64,
    /// Commands arriving at the server from the researcher, by server time.
    pub researcher: Vec<(i64, Command)>,
    /// Hard stop for the virtual clock.
    pub until_ms: i64,
}

impl LoopbackConfig {
    pub fn new(researcher: Vec<(i64, Command)>, until_ms: i64) -> Self {
        Self { link_delay_ms: 0, headset_skew_ms: 0, researcher, until_ms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Dest {
    Hub(PeerId),
    Headset,
}

pub struct Loopback {
    pub hub: Hub,
    pub sim: HeadsetSim,
    /// Everything the researcher connection received.
    pub researcher_inbox: Vec<Message>,
    /// Virtual time the run stopped at.
    pub end_ms: i64,
}

struct Link {
    delay: i64,
    seq: u64,
    queue: BinaryHeap<Reverse<(i64, u64, Dest, String)>>,
}

impl Link {
    fn send(&mut self, now: i64, to: Dest, msg: &Message) {
        self.seq += 1;
        self.queue.push(Reverse((now + self.delay, self.seq, to, encode(msg))));
    }

    fn pop_due(&mut self, now: i64) -> Option<(Dest, String)> {
        if self.queue.peek().is_some_and(|Reverse(m)| m.0 <= now) {
            self.queue.pop().map(|Reverse((_, _, to, text))| (to, text))
        } else {
            None
        }
    }
}

/// Runs until the headset is done, the session has stopped running and the
/// link is idle, or until `until_ms`.
pub fn run_loopback(hub: Hub, sim: HeadsetSim, cfg: &LoopbackConfig) -> Loopback {
    let mut run = Loopback { hub, sim, researcher_inbox: Vec::new(), end_ms: 0 };
    let mut link = Link { delay: cfg.link_delay_ms, seq: 0, queue: BinaryHeap::new() };
    let mut commands = cfg.researcher.clone();
    commands.sort_by_key(|c| c.0);
    let mut commands = commands.into_iter().peekable();
    let skew = cfg.headset_skew_ms;

    run.hub.connect(HEADSET_PEER);
    run.hub.connect(RESEARCHER_PEER);
    let hello = Message::Hello { role: Role::Researcher, session_id: None, protocol_version: PROTOCOL_VERSION };
    link.send(0, Dest::Hub(RESEARCHER_PEER), &hello);
    let hello = run.sim.hello();
    link.send(0, Dest::Hub(HEADSET_PEER), &hello);

    let route = |link: &mut Link, run: &mut Loopback, out: Vec<Outbound>, now: i64| {
        for o in out {
            match o.to {
                HEADSET_PEER => link.send(now, Dest::Headset, &o.msg),
                _ => run.researcher_inbox.push(o.msg),
            }
            if o.close {
                run.hub.disconnect(o.to);
            }
        }
    };

    let mut now = 0;
    while now <= cfg.until_ms {
        while let Some((_, cmd)) = commands.next_if(|c| c.0 <= now) {
            link.send(now, Dest::Hub(RESEARCHER_PEER), &Message::Cmd(cmd));
        }
        loop {
            let mut progressed = false;
            while let Some((to, text)) = link.pop_due(now) {
                progressed = true;
                match to {
                    Dest::Hub(peer) => {
                        let out = run.hub.handle_raw(peer, text.as_bytes(), now);
                        route(&mut link, &mut run, out, now);
                    }
                    Dest::Headset => {
                        let msg = decode(text.as_bytes()).expect("server output decodes");
                        for reply in run.sim.on_message(&msg, now + skew) {
                            link.send(now, Dest::Hub(HEADSET_PEER), &reply);
                        }
                    }
                }
            }
            let out = run.hub.tick(now);
            progressed |= !out.is_empty();
            route(&mut link, &mut run, out, now);
            for pose in run.sim.poll(now + skew) {
                progressed = true;
                link.send(now, Dest::Hub(HEADSET_PEER), &pose);
            }
            if !progressed {
                break;
            }
        }
        run.end_ms = now;
        let running = matches!(run.hub.session().state(), SessionState::Running { .. });
        if run.sim.is_done() && !running && link.queue.is_empty() && commands.peek().is_none() {
            break;
        }
        now += 1;
    }
    run
}
