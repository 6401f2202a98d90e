//! Three-layer memory: raw context storage, the task queue and the
//! compressed context cache.
//!
//! Retention is measured on the simulator's logical clock. An entry is
//! retrievable while `now - created_at < ttl`; [`MemoryStore::expire`]
//! physically purges entries that are no longer retrievable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};
use crate::model::{Task, TaskId, TaskKind, TaskStatus};

pub const HOUR: f64 = 3600.0;
pub const DAY: f64 = 24.0 * HOUR;
pub const RAW_TTL: f64 = 24.0 * HOUR;
pub const COMPRESSED_TTL: f64 = 7.0 * DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Probe,
    Executor,
    Environment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawContextEntry {
    pub entry_id: EntryId,
    pub created_at: f64,
    pub source: Source,
    pub text: String,
    pub critical_tags: BTreeSet<String>,
    pub ttl: f64,
}

impl RawContextEntry {
    pub fn new(entry_id: EntryId, created_at: f64, source: Source, text: impl Into<String>) -> Self {
        RawContextEntry {
            entry_id,
            created_at,
            source,
            text: text.into(),
            critical_tags: BTreeSet::new(),
            ttl: RAW_TTL,
        }
    }

    pub fn with_tags<I: IntoIterator<Item = String>>(mut self, tags: I) -> Self {
        self.critical_tags.extend(tags);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedContextEntry {
    pub entry_id: EntryId,
    pub created_at: f64,
    pub summary_text: String,
    pub source_entry_ids: BTreeSet<EntryId>,
    pub preserved_tags: BTreeSet<String>,
    pub ttl: f64,
    /// Set when a remote summarizer fell back to the extractive one.
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Raw,
    Compressed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredEntry {
    Raw(RawContextEntry),
    Compressed(CompressedContextEntry),
}

impl StoredEntry {
    pub fn id(&self) -> EntryId {
        match self {
            StoredEntry::Raw(e) => e.entry_id,
            StoredEntry::Compressed(e) => e.entry_id,
        }
    }

    pub fn created_at(&self) -> f64 {
        match self {
            StoredEntry::Raw(e) => e.created_at,
            StoredEntry::Compressed(e) => e.created_at,
        }
    }

    pub fn ttl(&self) -> f64 {
        match self {
            StoredEntry::Raw(e) => e.ttl,
            StoredEntry::Compressed(e) => e.ttl,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            StoredEntry::Raw(e) => &e.text,
            StoredEntry::Compressed(e) => &e.summary_text,
        }
    }

    pub fn layer(&self) -> Layer {
        match self {
            StoredEntry::Raw(_) => Layer::Raw,
            StoredEntry::Compressed(_) => Layer::Compressed,
        }
    }

    fn live_at(&self, now: f64) -> bool {
        now - self.created_at() < self.ttl()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub score: usize,
    pub entry: StoredEntry,
}

#[derive(Serialize)]
struct LogRecord<'a> {
    kind: &'static str,
    id: EntryId,
    created_at: f64,
    ttl: f64,
    text: &'a str,
    tags: &'a BTreeSet<String>,
}

/// Priority queue of tasks gated on dependency completion.
#[derive(Debug, Default, Clone)]
pub struct TaskQueue {
    seq: u64,
    tasks: BTreeMap<TaskId, (u64, Task)>,
}

impl TaskQueue {
    pub fn enqueue(&mut self, mut task: Task) -> Result<()> {
        if self.tasks.contains_key(&task.task_id) {
            return Err(AoiError::Duplicate(format!("task {}", task.task_id)));
        }
        if let Some(missing) = task.depends_on.iter().find(|d| !self.tasks.contains_key(*d)) {
            return Err(AoiError::Contract(format!(
                "task {} depends on {} which was never enqueued",
                task.task_id, missing
            )));
        }
        task.status = TaskStatus::Pending;
        self.seq += 1;
        self.tasks.insert(task.task_id.clone(), (self.seq, task));
        Ok(())
    }

    fn runnable(&self, task: &Task) -> bool {
        task.status == TaskStatus::Pending
            && task
                .depends_on
                .iter()
                .all(|d| matches!(self.tasks.get(d), Some((_, t)) if t.status == TaskStatus::Done))
    }

    fn best(&self, kind: Option<TaskKind>) -> Option<TaskId> {
        self.tasks
            .values()
            .filter(|(_, t)| self.runnable(t) && kind.is_none_or(|k| t.kind == k))
            .max_by(|(sa, a), (sb, b)| a.priority.cmp(&b.priority).then(sb.cmp(sa)))
            .map(|(_, t)| t.task_id.clone())
    }

    fn take(&mut self, id: Option<TaskId>) -> Option<Task> {
        let (_, task) = self.tasks.get_mut(&id?)?;
        task.status = TaskStatus::Running;
        Some(task.clone())
    }

    /// Highest-priority runnable task; ties go to the earliest enqueued.
    pub fn dequeue(&mut self) -> Option<Task> {
        let id = self.best(None);
        self.take(id)
    }

    pub fn dequeue_kind(&mut self, kind: TaskKind) -> Option<Task> {
        let id = self.best(Some(kind));
        self.take(id)
    }

    /// Takes a specific task if it is runnable.
    pub fn dequeue_id(&mut self, id: &TaskId) -> Option<Task> {
        if !self.tasks.get(id).is_some_and(|(_, t)| self.runnable(t)) {
            return None;
        }
        self.take(Some(id.clone()))
    }

    pub fn complete(&mut self, id: &TaskId, status: TaskStatus) -> Result<()> {
        let (_, task) = self
            .tasks
            .get_mut(id)
            .ok_or_else(|| AoiError::Contract(format!("unknown task {id}")))?;
        task.status = status;
        Ok(())
    }

    pub fn status(&self, id: &TaskId) -> Option<TaskStatus> {
        self.tasks.get(id).map(|(_, t)| t.status)
    }

    /// Runnable tasks in dequeue order.
    pub fn runnable_tasks(&self) -> Vec<&Task> {
        let mut v: Vec<_> = self.tasks.values().filter(|(_, t)| self.runnable(t)).collect();
        v.sort_by(|(sa, a), (sb, b)| b.priority.cmp(&a.priority).then(sa.cmp(sb)));
        v.into_iter().map(|(_, t)| t).collect()
    }

    /// Drops tasks that never started; running and finished tasks stay so
    /// dependency checks keep working.
    pub fn clear_pending(&mut self) -> usize {
        let before = self.tasks.len();
        self.tasks.retain(|_, (_, t)| t.status != TaskStatus::Pending);
        before - self.tasks.len()
    }

    pub fn pending_len(&self) -> usize {
        self.tasks.values().filter(|(_, t)| t.status == TaskStatus::Pending).count()
    }

    pub fn completed(&self) -> usize {
        self.tasks.values().filter(|(_, t)| t.status == TaskStatus::Done).count()
    }
}

/// Owner of all three layers. Mutations are expected from one thread
/// (the orchestrator loop); readers only need `&self`.
pub struct MemoryStore {
    raw: BTreeMap<EntryId, RawContextEntry>,
    compressed: BTreeMap<EntryId, CompressedContextEntry>,
    pub tasks: TaskQueue,
    raw_ttl: f64,
    compressed_ttl: f64,
    flat: bool,
    next_id: u64,
    last_expire: f64,
    puts: u64,
    purged: u64,
    log: Option<Box<dyn Write + Send>>,
}

impl fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStore")
            .field("raw", &self.raw.len())
            .field("compressed", &self.compressed.len())
            .field("raw_ttl", &self.raw_ttl)
            .field("compressed_ttl", &self.compressed_ttl)
            .field("flat", &self.flat)
            .finish()
    }
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new(RAW_TTL, COMPRESSED_TTL)
    }
}

impl MemoryStore {
    pub fn new(raw_ttl: f64, compressed_ttl: f64) -> Self {
        MemoryStore {
            raw: BTreeMap::new(),
            compressed: BTreeMap::new(),
            tasks: TaskQueue::default(),
            raw_ttl,
            compressed_ttl,
            flat: false,
            next_id: 0,
            last_expire: f64::NEG_INFINITY,
            puts: 0,
            purged: 0,
            log: None,
        }
    }

    /// Single unbounded store: no expiry, queries see every entry regardless
    /// of layer.
    pub fn flat() -> Self {
        MemoryStore { flat: true, ..Self::new(f64::INFINITY, f64::INFINITY) }
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    pub fn with_log(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.log = Some(sink);
        self
    }

    pub fn next_entry_id(&mut self) -> EntryId {
        self.next_id += 1;
        EntryId(self.next_id)
    }

    fn known(&self, id: EntryId) -> bool {
        self.raw.contains_key(&id) || self.compressed.contains_key(&id)
    }

    fn append_log(&mut self, record: LogRecord<'_>) -> Result<()> {
        if let Some(sink) = self.log.as_mut() {
            serde_json::to_writer(&mut *sink, &record)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn put_raw(&mut self, mut entry: RawContextEntry) -> Result<EntryId> {
        if self.known(entry.entry_id) {
            return Err(AoiError::Duplicate(format!("entry {}", entry.entry_id)));
        }
        if !entry.created_at.is_finite() {
            return Err(AoiError::Contract("entry timestamp must be finite".into()));
        }
        entry.ttl = self.raw_ttl;
        self.next_id = self.next_id.max(entry.entry_id.0);
        self.append_log(LogRecord {
            kind: "raw",
            id: entry.entry_id,
            created_at: entry.created_at,
            ttl: entry.ttl,
            text: &entry.text,
            tags: &entry.critical_tags,
        })?;
        let id = entry.entry_id;
        self.raw.insert(id, entry);
        self.puts += 1;
        Ok(id)
    }

    pub fn put_compressed(&mut self, mut entry: CompressedContextEntry) -> Result<EntryId> {
        if self.known(entry.entry_id) {
            return Err(AoiError::Duplicate(format!("entry {}", entry.entry_id)));
        }
        if entry.source_entry_ids.is_empty() {
            return Err(AoiError::Contract("compressed entry without source entries".into()));
        }
        // Sources may already have expired out of the raw layer; only check
        // tags against sources still held.
        let held: Vec<_> = entry.source_entry_ids.iter().filter_map(|id| self.raw.get(id)).collect();
        if held.len() == entry.source_entry_ids.len() {
            let allowed: BTreeSet<&String> = held.iter().flat_map(|e| e.critical_tags.iter()).collect();
            if let Some(tag) = entry.preserved_tags.iter().find(|t| !allowed.contains(t)) {
                return Err(AoiError::Contract(format!(
                    "preserved tag {tag} does not occur in any source entry"
                )));
            }
        }
        entry.ttl = self.compressed_ttl;
        self.next_id = self.next_id.max(entry.entry_id.0);
        self.append_log(LogRecord {
            kind: "compressed",
            id: entry.entry_id,
            created_at: entry.created_at,
            ttl: entry.ttl,
            text: &entry.summary_text,
            tags: &entry.preserved_tags,
        })?;
        let id = entry.entry_id;
        self.compressed.insert(id, entry);
        self.puts += 1;
        Ok(id)
    }

    pub fn get_raw(&self, id: EntryId, now: f64) -> Option<&RawContextEntry> {
        self.raw.get(&id).filter(|e| now - e.created_at < e.ttl)
    }

    pub fn get_compressed(&self, id: EntryId, now: f64) -> Option<&CompressedContextEntry> {
        self.compressed.get(&id).filter(|e| now - e.created_at < e.ttl)
    }

    /// Purges every entry whose age has reached its TTL.
    pub fn expire(&mut self, now: f64) -> Result<usize> {
        if now < self.last_expire {
            return Err(AoiError::Contract(format!(
                "clock regression: expire({now}) after expire({})",
                self.last_expire
            )));
        }
        self.last_expire = now;
        let before = self.live_count();
        self.raw.retain(|_, e| now - e.created_at < e.ttl);
        self.compressed.retain(|_, e| now - e.created_at < e.ttl);
        let removed = before - self.live_count();
        self.purged += removed as u64;
        Ok(removed)
    }

    pub fn live_count(&self) -> usize {
        self.raw.len() + self.compressed.len()
    }

    pub fn total_puts(&self) -> u64 {
        self.puts
    }

    pub fn total_purged(&self) -> u64 {
        self.purged
    }

    /// Live entries of `layer` scored by how many distinct query terms they
    /// contain. Higher score first, then newer, then higher id. Entries with
    /// no matching term are omitted. A flat store ignores `layer`.
    pub fn query_context(&self, keywords: &[&str], layer: Layer, now: f64) -> Vec<ScoredEntry> {
        let terms: BTreeSet<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
        if terms.is_empty() {
            return Vec::new();
        }
        let raw = self.raw.values().map(|e| StoredEntry::Raw(e.clone()));
        let compressed = self.compressed.values().map(|e| StoredEntry::Compressed(e.clone()));
        let candidates: Box<dyn Iterator<Item = StoredEntry>> = match (self.flat, layer) {
            (true, _) => Box::new(raw.chain(compressed)),
            (false, Layer::Raw) => Box::new(raw),
            (false, Layer::Compressed) => Box::new(compressed),
        };
        let mut hits: Vec<ScoredEntry> = candidates
            .filter(|e| e.live_at(now))
            .filter_map(|entry| {
                let words = word_set(entry.text());
                let score = terms.iter().filter(|t| words.contains(t.as_str())).count();
                (score > 0).then_some(ScoredEntry { score, entry })
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .cmp(&a.score)
                .then(b.entry.created_at().total_cmp(&a.entry.created_at()))
                .then(b.entry.id().cmp(&a.entry.id()))
        });
        hits
    }
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskKind;
    use proptest::prelude::*;

    fn raw(store: &mut MemoryStore, at: f64, text: &str) -> EntryId {
        let id = store.next_entry_id();
        store.put_raw(RawContextEntry::new(id, at, Source::Probe, text)).unwrap()
    }

    fn compressed(store: &mut MemoryStore, at: f64, text: &str, sources: &[EntryId]) -> EntryId {
        let id = store.next_entry_id();
        store
            .put_compressed(CompressedContextEntry {
                entry_id: id,
                created_at: at,
                summary_text: text.into(),
                source_entry_ids: sources.iter().copied().collect(),
                preserved_tags: BTreeSet::new(),
                ttl: 0.0,
                degraded: false,
            })
            .unwrap()
    }

    #[test]
    fn raw_round_trip_and_expiry() {
        let mut m = MemoryStore::default();
        let id = raw(&mut m, 0.0, "pool exhausted");
        assert_eq!(m.get_raw(id, HOUR).unwrap().text, "pool exhausted");
        assert!(m.get_raw(id, 24.0 * HOUR - 1.0).is_some());
        assert!(m.get_raw(id, 24.0 * HOUR + 1.0).is_none());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = MemoryStore::default();
        let id = raw(&mut m, 0.0, "a");
        let err = m.put_raw(RawContextEntry::new(id, 1.0, Source::Probe, "b")).unwrap_err();
        assert!(matches!(err, AoiError::Duplicate(_)));
    }

    #[test]
    fn thousand_puts_are_distinct_and_live() {
        let mut m = MemoryStore::default();
        let ids: BTreeSet<_> = (0..1000).map(|i| raw(&mut m, i as f64, "x")).collect();
        assert_eq!(ids.len(), 1000);
        assert!(ids.iter().all(|id| m.get_raw(*id, 2000.0).is_some()));
    }

    #[test]
    fn compressed_retention() {
        let mut m = MemoryStore::default();
        let src = raw(&mut m, 0.0, "x");
        let id = compressed(&mut m, 0.0, "summary", &[src]);
        assert!(m.get_compressed(id, 7.0 * DAY - 1.0).is_some());
        assert!(m.get_compressed(id, 7.0 * DAY + 1.0).is_none());
    }

    #[test]
    fn compressed_tags_must_come_from_sources() {
        let mut m = MemoryStore::default();
        let id = m.next_entry_id();
        let src = m
            .put_raw(RawContextEntry::new(id, 0.0, Source::Probe, "x").with_tags(["t1".to_string()]))
            .unwrap();
        let mut entry = CompressedContextEntry {
            entry_id: m.next_entry_id(),
            created_at: 0.0,
            summary_text: "s".into(),
            source_entry_ids: [src].into(),
            preserved_tags: ["t1".to_string(), "t2".to_string()].into(),
            ttl: 0.0,
            degraded: false,
        };
        assert!(matches!(m.put_compressed(entry.clone()), Err(AoiError::Contract(_))));
        entry.preserved_tags.remove("t2");
        assert!(m.put_compressed(entry.clone()).is_ok());
        entry.entry_id = m.next_entry_id();
        entry.source_entry_ids.clear();
        assert!(m.put_compressed(entry).is_err());
    }

    #[test]
    fn expire_counts() {
        let mut m = MemoryStore::default();
        assert_eq!(m.expire(0.0).unwrap(), 0);
        let mut m = MemoryStore::default();
        let ids: Vec<_> = (0..3).map(|_| raw(&mut m, 0.0, "x")).collect();
        assert_eq!(m.expire(25.0 * HOUR).unwrap(), 3);
        let mut m = MemoryStore::default();
        let src = raw(&mut m, 0.0, "x");
        let c = compressed(&mut m, 0.0, "y", &[src]);
        assert_eq!(m.expire(25.0 * HOUR).unwrap(), 1);
        assert!(m.get_compressed(c, 25.0 * HOUR).is_some());
        assert!(matches!(m.expire(HOUR), Err(AoiError::Contract(_))));
        let _ = ids;
    }

    #[test]
    fn query_ranking() {
        let mut m = MemoryStore::default();
        let one = raw(&mut m, 0.0, "db-1 latency high");
        let both = raw(&mut m, 0.0, "db-1 pool exhausted");
        let hits = m.query_context(&["db-1", "pool"], Layer::Raw, 10.0);
        assert_eq!(hits.iter().map(|h| h.entry.id()).collect::<Vec<_>>(), [both, one]);
        assert_eq!(hits[0].score, 2);

        // expired entries excluded even without an expire() call
        assert!(m.query_context(&["db-1"], Layer::Raw, 25.0 * HOUR).is_empty());

        let mut m = MemoryStore::default();
        let old = raw(&mut m, 0.0, "api error");
        let new = raw(&mut m, 60.0, "api error");
        let hits = m.query_context(&["api"], Layer::Raw, 100.0);
        assert_eq!(hits.iter().map(|h| h.entry.id()).collect::<Vec<_>>(), [new, old]);
        assert!(m.query_context(&["nothing"], Layer::Raw, 100.0).is_empty());
        assert!(m.query_context(&["api"], Layer::Compressed, 100.0).is_empty());
    }

    #[test]
    fn flat_store_never_expires_and_mixes_layers() {
        let mut m = MemoryStore::flat();
        let r = raw(&mut m, 0.0, "api error");
        let c = compressed(&mut m, 0.0, "api summary", &[r]);
        assert_eq!(m.expire(30.0 * DAY).unwrap(), 0);
        let ids: Vec<_> = m.query_context(&["api"], Layer::Compressed, 30.0 * DAY).iter().map(|h| h.entry.id()).collect();
        assert_eq!(ids, [c, r]);
    }

    #[test]
    fn persistence_log_is_line_delimited_json() {
        use std::sync::{Arc, Mutex};
        #[derive(Clone, Default)]
        struct Sink(Arc<Mutex<Vec<u8>>>);
        impl Write for Sink {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let sink = Sink::default();
        let mut m = MemoryStore::default().with_log(Box::new(sink.clone()));
        let r = raw(&mut m, 5.0, "hello");
        compressed(&mut m, 6.0, "hi", &[r]);
        let bytes = sink.0.lock().unwrap().clone();
        let lines: Vec<serde_json::Value> = String::from_utf8(bytes)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["kind"], "raw");
        assert_eq!(lines[0]["text"], "hello");
        assert_eq!(lines[1]["kind"], "compressed");
        assert_eq!(lines[1]["ttl"], COMPRESSED_TTL);
    }

    #[test]
    fn queue_priority_and_fifo() {
        let mut q = TaskQueue::default();
        q.enqueue(Task::new("a", TaskKind::Probe).with_priority(1)).unwrap();
        q.enqueue(Task::new("b", TaskKind::Probe).with_priority(5)).unwrap();
        assert_eq!(q.dequeue().unwrap().task_id.0, "b");

        let mut q = TaskQueue::default();
        q.enqueue(Task::new("first", TaskKind::Probe).with_priority(3)).unwrap();
        q.enqueue(Task::new("second", TaskKind::Probe).with_priority(3)).unwrap();
        assert_eq!(q.dequeue().unwrap().task_id.0, "first");
        assert_eq!(q.dequeue().unwrap().task_id.0, "second");
        assert!(q.dequeue().is_none());
    }

    #[test]
    fn queue_dependency_gating() {
        let mut q = TaskQueue::default();
        q.enqueue(Task::new("b", TaskKind::Execute).with_priority(1)).unwrap();
        q.enqueue(Task::new("a", TaskKind::Execute).with_priority(5).depending_on("b")).unwrap();
        let first = q.dequeue().unwrap();
        assert_eq!(first.task_id.0, "b");
        assert!(q.dequeue().is_none(), "a is gated until b is done");
        q.complete(&first.task_id, TaskStatus::Done).unwrap();
        assert_eq!(q.dequeue().unwrap().task_id.0, "a");
        assert!(q.enqueue(Task::new("c", TaskKind::Probe).depending_on("zzz")).is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        PutRaw(f64),
        PutCompressed(f64),
        Expire(f64),
        Query(f64),
    }

    fn ops() -> impl Strategy<Value = Vec<Op>> {
        let op = prop_oneof![
            (0.0f64..4.0 * HOUR).prop_map(Op::PutRaw),
            (0.0f64..4.0 * HOUR).prop_map(Op::PutCompressed),
            (0.0f64..30.0 * HOUR).prop_map(Op::Expire),
            (0.0f64..30.0 * HOUR).prop_map(Op::Query),
        ];
        proptest::collection::vec(op, 1..80)
    }

    proptest! {
        #[test]
        fn ttl_soundness_and_conservation(schedule in ops()) {
            let mut m = MemoryStore::default();
            let mut now = 0.0f64;
            let mut src = None;
            for op in schedule {
                match op {
                    Op::PutRaw(dt) => { now += dt; src = Some(raw(&mut m, now, "svc event")); }
                    Op::PutCompressed(dt) => {
                        now += dt;
                        let s = match src { Some(s) => s, None => raw(&mut m, now, "svc event") };
                        compressed(&mut m, now, "svc summary", &[s]);
                    }
                    Op::Expire(dt) => { now += dt; m.expire(now).unwrap(); }
                    Op::Query(dt) => {
                        now += dt;
                        for layer in [Layer::Raw, Layer::Compressed] {
                            for hit in m.query_context(&["svc"], layer, now) {
                                prop_assert!(now - hit.entry.created_at() < hit.entry.ttl());
                            }
                        }
                    }
                }
                prop_assert_eq!(m.total_puts() - m.total_purged(), m.live_count() as u64);
            }
        }

        #[test]
        fn dequeue_respects_dependencies(n in 1usize..20, edges in proptest::collection::vec((0usize..20, 0usize..20), 0..40),
                                          prios in proptest::collection::vec(0u32..5, 20)) {
            // Edges only point from higher to lower index, so the graph is a DAG.
            let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
            for (a, b) in edges {
                let (a, b) = (a % n, b % n);
                if a > b { deps[a].insert(b); }
            }
            let mut q = TaskQueue::default();
            for i in 0..n {
                let mut t = Task::new(format!("t{i}"), TaskKind::Probe).with_priority(prios[i]);
                t.depends_on = deps[i].iter().map(|d| TaskId(format!("t{d}"))).collect();
                q.enqueue(t).unwrap();
            }
            let mut done: BTreeSet<usize> = BTreeSet::new();
            while let Some(t) = q.dequeue() {
                let i: usize = t.task_id.0[1..].parse().unwrap();
                prop_assert!(deps[i].iter().all(|d| done.contains(d)));
                done.insert(i);
                q.complete(&t.task_id, TaskStatus::Done).unwrap();
            }
            prop_assert_eq!(done.len(), n);
        }
    }
}
