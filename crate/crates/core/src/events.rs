//! Relational event logs: the `(sender, receiver, time)` triplets every other
//! module consumes, plus CSV ingestion, rescaling, splitting and aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MulchError, Result};
use crate::model::Membership;

/// A single directed event `sender -> receiver` at `time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub sender: usize,
    pub receiver: usize,
    pub time: f64,
}

impl Event {
    pub fn new(sender: usize, receiver: usize, time: f64) -> Self {
        Event {
            sender,
            receiver,
            time,
        }
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.sender, self.receiver)
    }
}

/// Time-ordered events over `n_nodes` nodes observed on `[0, duration]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    n_nodes: usize,
    duration: f64,
}

impl EventStream {
    /// Validates and stably sorts `events` by time.
    pub fn new(mut events: Vec<Event>, n_nodes: usize, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(MulchError::InvalidStream(format!(
                "duration must be a finite non-negative number, got {duration}"
            )));
        }
        for (idx, e) in events.iter().enumerate() {
            if e.sender == e.receiver {
                return Err(MulchError::InvalidStream(format!(
                    "event {idx} is a self-loop on node {}",
                    e.sender
                )));
            }
            if e.sender >= n_nodes || e.receiver >= n_nodes {
                return Err(MulchError::InvalidStream(format!(
                    "event {idx} ({} -> {}) references a node outside 0..{n_nodes}",
                    e.sender, e.receiver
                )));
            }
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(MulchError::InvalidStream(format!(
                    "event {idx} has invalid time {}",
                    e.time
                )));
            }
            if e.time > duration {
                return Err(MulchError::InvalidStream(format!(
                    "event {idx} at t = {} lies beyond the duration {duration}",
                    e.time
                )));
            }
        }
        // `sort_by` is stable, so ties keep their input order.
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(EventStream {
            events,
            n_nodes,
            duration,
        })
    }

    /// Stream whose duration is the time of its last event.
    pub fn from_events(events: Vec<Event>, n_nodes: usize) -> Result<Self> {
        let duration = events.iter().map(|e| e.time).fold(0.0, f64::max);
        Self::new(events, n_nodes, duration)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.events.first().map(|e| e.time)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.time)
    }

    /// One past the largest node index that takes part in an event.
    pub fn active_nodes(&self) -> usize {
        self.events
            .iter()
            .map(|e| e.sender.max(e.receiver) + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn with_duration(self, duration: f64) -> Result<Self> {
        Self::new(self.events, self.n_nodes, duration)
    }

    pub fn with_n_nodes(self, n_nodes: usize) -> Result<Self> {
        Self::new(self.events, n_nodes, self.duration)
    }
}

/// Bijection between the node ids found in a file and dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// `"0"`, `"1"`, ... for streams that already use dense indices.
    pub fn identity(n: usize) -> Self {
        let mut map = IdMap::new();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    /// Index of `id`, appending it if unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.index.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), idx);
        idx
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| MulchError::json(path, e))?;
        std::fs::write(path, json).map_err(|e| MulchError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MulchError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MulchError::json(path, e))
    }
}

impl Serialize for IdMap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IdMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = HashMap::<String, usize>::deserialize(deserializer)?;
        let mut ids = vec![None; raw.len()];
        for (id, idx) in &raw {
            match ids.get_mut(*idx) {
                Some(slot @ None) => *slot = Some(id.clone()),
                _ => {
                    return Err(serde::de::Error::custom(format!(
                        "id map is not a bijection onto 0..{} (offending id {id:?} -> {idx})",
                        raw.len()
                    )))
                }
            }
        }
        let ids: Vec<String> = ids.into_iter().map(Option::unwrap).collect();
        let index = raw;
        Ok(IdMap { ids, index })
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Skip `x -> x` rows instead of failing.
    pub drop_self_loops: bool,
    /// Observation horizon; defaults to the largest timestamp.
    pub duration: Option<f64>,
    /// Reuse an existing mapping (ids not in it are appended).
    pub id_map: Option<IdMap>,
}

/// Reads a `sender,receiver,time` CSV (header optional).
pub fn load_events(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(EventStream, IdMap)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| MulchError::io(path, e))?;
    read_events(file, path, opts)
}

/// Same as [`load_events`] on any reader; `origin` only labels error messages.
pub fn read_events<R: Read>(
    reader: R,
    origin: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<(EventStream, IdMap)> {
    let origin = origin.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let mut ids = opts.id_map.clone().unwrap_or_default();
    let mut events = Vec::new();
    let mut first = true;
    for record in rdr.records() {
        let record = record.map_err(|e| MulchError::Parse {
            path: origin.to_owned(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| MulchError::Parse {
            path: origin.to_owned(),
            line,
            message,
        };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 columns (sender,receiver,time), found {}",
                record.len()
            )));
        }
        let time = match record[2].parse::<f64>() {
            Ok(t) => t,
            Err(_) if first => {
                // header row
                first = false;
                continue;
            }
            Err(e) => return Err(parse_err(format!("bad time {:?}: {e}", &record[2]))),
        };
        first = false;
        if !time.is_finite() || time < 0.0 {
            return Err(parse_err(format!(
                "time must be finite and non-negative, got {time}"
            )));
        }
        if record[0].is_empty() || record[1].is_empty() {
            return Err(parse_err("empty node id".into()));
        }
        if record[0] == record[1] {
            if opts.drop_self_loops {
                continue;
            }
            return Err(MulchError::SelfLoop {
                line,
                node: record[0].to_owned(),
            });
        }
        let sender = ids.intern(&record[0]);
        let receiver = ids.intern(&record[1]);
        events.push((sender, receiver, time));
    }
    if events.is_empty() {
        return Err(MulchError::NoEvents);
    }

    let events: Vec<Event> = events
        .into_iter()
        .map(|(s, r, t)| Event::new(s, r, t))
        .collect();
    let max_time = events.iter().map(|e| e.time).fold(0.0, f64::max);
    let duration = opts.duration.unwrap_or(max_time);
    let stream = EventStream::new(events, ids.len(), duration)?;
    Ok((stream, ids))
}

/// Writes the stream as CSV with a header, naming nodes through `ids` when given.
pub fn save_events(
    path: impl AsRef<Path>,
    stream: &EventStream,
    ids: Option<&IdMap>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| MulchError::io(path, e))?;
    write_events(file, stream, ids).map_err(|e| MulchError::io(path, e))
}

pub fn write_events<W: Write>(
    writer: W,
    stream: &EventStream,
    ids: Option<&IdMap>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sender", "receiver", "time"])?;
    let name = |i: usize| -> String {
        ids.and_then(|m| m.name(i))
            .map(str::to_owned)
            .unwrap_or_else(|| i.to_string())
    };
    for e in stream.events() {
        w.write_record([name(e.sender), name(e.receiver), e.time.to_string()])?;
    }
    w.flush()
}

/// Affinely maps timestamps from `[min_t, max_t]` onto `[0, target_max]`.
pub fn rescale_timestamps(stream: &EventStream, target_max: f64) -> Result<EventStream> {
    if !(target_max.is_finite() && target_max > 0.0) {
        return Err(MulchError::InvalidParameters(format!(
            "rescale target must be positive, got {target_max}"
        )));
    }
    let (Some(lo), Some(hi)) = (stream.first_time(), stream.last_time()) else {
        return Err(MulchError::NoEvents);
    };
    let span = hi - lo;
    if span <= 0.0 {
        return Err(MulchError::ZeroTimeSpan);
    }
    let scale = target_max / span;
    let events = stream
        .events()
        .iter()
        .map(|e| Event {
            time: ((e.time - lo) * scale).clamp(0.0, target_max),
            ..*e
        })
        .collect();
    EventStream::new(events, stream.n_nodes(), target_max)
}

/// First `n_train` events for training, the rest for testing.
///
/// The training horizon is the time of the last training event; the test
/// stream keeps the full stream's horizon.
pub fn split_train_test(
    stream: &EventStream,
    n_train: usize,
) -> Result<(EventStream, EventStream)> {
    let n = stream.len();
    if n_train == 0 || n_train >= n {
        return Err(MulchError::SplitOutOfRange {
            n_train,
            n_events: n,
        });
    }
    let (head, tail) = stream.events().split_at(n_train);
    let train_end = head[n_train - 1].time;
    let train = EventStream {
        events: head.to_vec(),
        n_nodes: stream.n_nodes(),
        duration: train_end,
    };
    let test = EventStream {
        events: tail.to_vec(),
        n_nodes: stream.n_nodes(),
        duration: stream.duration(),
    };
    Ok((train, test))
}

/// Node-pair event counts `N_ij`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(n: usize) -> Self {
        CountMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j) as f64)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.n.max(1))
    }
}

impl std::ops::Add for &CountMatrix {
    type Output = CountMatrix;

    fn add(self, rhs: &CountMatrix) -> CountMatrix {
        assert_eq!(self.n, rhs.n, "count matrices of different sizes");
        CountMatrix {
            n: self.n,
            counts: self
                .counts
                .iter()
                .zip(&rhs.counts)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

pub fn count_matrix(stream: &EventStream) -> CountMatrix {
    let n = stream.n_nodes();
    let mut m = CountMatrix::zeros(n);
    for e in stream.events() {
        m.counts[e.sender * n + e.receiver] += 1;
    }
    m
}

/// Extends a training membership to `n_total` nodes, placing every new node
/// in the most populated training block (lowest index on ties).
pub fn assign_new_nodes(train: &Membership, n_total: usize) -> Result<Membership> {
    if n_total < train.len() {
        return Err(MulchError::InvalidMembership(format!(
            "cannot shrink a membership of {} nodes to {n_total}",
            train.len()
        )));
    }
    if n_total == train.len() {
        return Ok(train.clone());
    }
    let sizes = train.block_sizes();
    let largest = sizes
        .iter()
        .enumerate()
        .fold(
            (0, 0),
            |best, (b, &s)| if s > best.1 { (b, s) } else { best },
        )
        .0;
    let mut labels = train.labels().to_vec();
    labels.resize(n_total, largest);
    Membership::new(labels, train.k())
}
