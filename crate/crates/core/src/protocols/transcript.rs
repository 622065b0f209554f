//! Causally ordered event logs for multi-party runs.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Tick shared by every quantum event of the instantaneous stage.
pub const STAGE_TICK: u32 = 0;
pub const SEND_TICK: u32 = 1;
pub const COMBINE_TICK: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EventKind {
    LocalOp,
    LocalMeasure,
    ClassicalSend,
    ClassicalReceive,
}

impl EventKind {
    pub fn is_quantum(self) -> bool {
        matches!(self, EventKind::LocalOp | EventKind::LocalMeasure)
    }
}

/// One transcript line.
///
/// `record` names the value a measurement produced or the message a send
/// emitted. `uses` lists the records (or, for a receive, the message) the
/// event's parameters depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u32,
    pub site: String,
    pub kind: EventKind,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub uses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub event: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    events: Vec<Event>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    fn fresh_id(&self, site: &str, prefix: &str) -> String {
        format!("{site}.{prefix}{}", self.events.len())
    }

    /// Quantum operation at the stage tick.
    pub fn local_op(&mut self, site: &str, payload: Value, uses: &[String]) {
        self.push(Event {
            tick: STAGE_TICK,
            site: site.into(),
            kind: EventKind::LocalOp,
            payload,
            record: None,
            uses: uses.to_vec(),
        });
    }

    /// Measurement at the stage tick; returns the new record id.
    pub fn measure(&mut self, site: &str, payload: Value, uses: &[String]) -> String {
        let id = self.fresh_id(site, "r");
        self.push(Event {
            tick: STAGE_TICK,
            site: site.into(),
            kind: EventKind::LocalMeasure,
            payload,
            record: Some(id.clone()),
            uses: uses.to_vec(),
        });
        id
    }

    /// Sends `records` from `from` to `to` and logs the matching receive.
    pub fn exchange(&mut self, from: &str, to: &str, records: &[String]) {
        let msg = self.fresh_id(from, "m");
        let values: Vec<Value> = records.iter().map(|r| self.value_of(r).unwrap_or(Value::Null)).collect();
        self.push(Event {
            tick: SEND_TICK,
            site: from.into(),
            kind: EventKind::ClassicalSend,
            payload: json!({ "to": to, "records": records, "values": values }),
            record: Some(msg.clone()),
            uses: records.to_vec(),
        });
        self.push(Event {
            tick: COMBINE_TICK,
            site: to.into(),
            kind: EventKind::ClassicalReceive,
            payload: json!({ "from": from, "records": records }),
            record: None,
            uses: vec![msg],
        });
    }

    /// Classical post-processing after all messages have arrived.
    pub fn combine(&mut self, site: &str, payload: Value, uses: &[String]) {
        self.push(Event {
            tick: COMBINE_TICK,
            site: site.into(),
            kind: EventKind::LocalOp,
            payload,
            record: None,
            uses: uses.to_vec(),
        });
    }

    /// The `outcome` field of the measurement that produced `record`.
    pub fn value_of(&self, record: &str) -> Option<Value> {
        self.events
            .iter()
            .find(|e| e.kind == EventKind::LocalMeasure && e.record.as_deref() == Some(record))
            .and_then(|e| e.payload.get("outcome").cloned())
    }

    /// Outcomes of every measurement performed at `site`, in order.
    pub fn site_outcomes(&self, site: &str) -> Vec<Value> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::LocalMeasure && e.site == site)
            .map(|e| e.payload.get("outcome").cloned().unwrap_or(Value::Null))
            .collect()
    }

    pub fn sites(&self) -> BTreeSet<String> {
        self.events.iter().map(|e| e.site.clone()).collect()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Number of events whose payload `op` field equals `op`.
    pub fn count_op(&self, op: &str) -> usize {
        self.events.iter().filter(|e| e.payload.get("op").and_then(Value::as_str) == Some(op)).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<serde_json::Result<Vec<Event>>>()?;
        Ok(Self { events })
    }

    /// Structural causality: every used record is visible at the site no later
    /// than the event's tick, and receives follow their sends strictly.
    pub fn check_causality(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut visible: HashMap<(String, String), u32> = HashMap::new();
        let mut sent: HashMap<String, (u32, String, Vec<String>)> = HashMap::new();
        let mut last_tick: BTreeMap<String, u32> = BTreeMap::new();
        for (i, e) in self.events.iter().enumerate() {
            let mut bad = |reason: String| out.push(Violation { event: i, reason });
            if let Some(&t) = last_tick.get(&e.site) {
                if e.tick < t {
                    bad(format!("tick {} at {} after tick {t}", e.tick, e.site));
                }
            }
            last_tick.insert(e.site.clone(), e.tick);
            match e.kind {
                EventKind::ClassicalReceive => {
                    let [msg] = e.uses.as_slice() else {
                        bad("receive must name exactly one message".into());
                        continue;
                    };
                    match sent.get(msg) {
                        None => bad(format!("message {msg} was never sent")),
                        Some((t, to, records)) => {
                            if *t >= e.tick {
                                bad(format!("message {msg} received at tick {} but sent at {t}", e.tick));
                            }
                            if *to != e.site {
                                bad(format!("message {msg} addressed to {to}, received at {}", e.site));
                            }
                            for r in records {
                                visible.entry((e.site.clone(), r.clone())).or_insert(e.tick);
                            }
                        }
                    }
                }
                _ => {
                    for r in &e.uses {
                        match visible.get(&(e.site.clone(), r.clone())) {
                            Some(&t) if t <= e.tick => {}
                            _ => bad(format!("{} uses {r} before it is known there", e.site)),
                        }
                    }
                    if let Some(id) = &e.record {
                        if e.kind == EventKind::ClassicalSend {
                            let to = e.payload.get("to").and_then(Value::as_str).unwrap_or_default();
                            sent.insert(id.clone(), (e.tick, to.to_string(), e.uses.clone()));
                        } else {
                            visible.insert((e.site.clone(), id.clone()), e.tick);
                        }
                    }
                }
            }
        }
        out
    }

    /// Every quantum event sits on the stage tick and every classical event
    /// strictly after it.
    pub fn check_instantaneous(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            let quantum = e.kind.is_quantum() && e.tick == STAGE_TICK;
            let classical = !e.kind.is_quantum() || e.tick > STAGE_TICK;
            let ok = match e.kind {
                EventKind::LocalMeasure => quantum,
                EventKind::LocalOp => quantum || e.payload.get("op").and_then(Value::as_str) == Some("combine"),
                _ => classical,
            };
            if !ok {
                out.push(Violation { event: i, reason: format!("{:?} at tick {}", e.kind, e.tick) });
            }
        }
        out
    }
}
