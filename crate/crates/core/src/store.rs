//! Triple store: vocabularies, splits, adjacency indexes and statistics.
//!
//! A [`KgStore`] is immutable once built. Construction goes through
//! [`StoreBuilder`], which interns labels into dense ids and collapses exact
//! duplicate lines within each split.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::binio;
use crate::error::{Error, Result};

/// Suffix appended to a relation label to name its reverse.
pub const REVERSE_SUFFIX: &str = "__inv";

const STORE_MAGIC: &[u8; 8] = b"KGRSTORE";
const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

/// A triple from an evaluation split. `label` is `None` for splits that only
/// hold true facts (e.g. FB15K test).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub label: Option<Label>,
}

impl LabeledTriple {
    /// True unless the line was explicitly labeled `-1`.
    pub fn is_true_fact(&self) -> bool {
        self.label != Some(Label::Negative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Bidirectional label ↔ dense id mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_string());
        self.ids.insert(label.to_string(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions<'a> {
    /// Optional `entity_label<TAB>description` side file.
    pub descriptions: Option<&'a Path>,
}

/// Table-1 style counts: relations, entities, train, valid, test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreCounts {
    pub relations: usize,
    pub entities: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl StoreCounts {
    pub fn as_tuple(&self) -> (usize, usize, usize, usize, usize) {
        (self.relations, self.entities, self.train, self.valid, self.test)
    }
}

/// Relations with fewer than `max_facts` training facts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotSlice {
    pub max_facts: usize,
    pub relations: Vec<RelationId>,
    /// Fraction of training facts whose relation is in the slice.
    pub instance_fraction: f64,
    /// Slice size over every relation in the vocabulary.
    pub relation_fraction: f64,
    /// Slice members that occur at least once in train.
    pub relations_in_train: usize,
    /// `relations_in_train` over the number of relations that occur in train.
    pub train_relation_fraction: f64,
}

#[derive(Debug, Default)]
pub struct StoreBuilder {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<LabeledTriple>,
    test: Vec<LabeledTriple>,
    seen_train: HashSet<Triple>,
    seen_valid: HashSet<LabeledTriple>,
    seen_test: HashSet<LabeledTriple>,
}

impl StoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a fact. Returns false if the exact line was already in the split.
    pub fn push(&mut self, split: Split, head: &str, relation: &str, tail: &str, label: Option<Label>) -> bool {
        let triple = Triple::new(
            EntityId(self.entities.intern(head)),
            RelationId(self.relations.intern(relation)),
            EntityId(self.entities.intern(tail)),
        );
        match split {
            Split::Train => {
                let fresh = self.seen_train.insert(triple);
                if fresh {
                    self.train.push(triple);
                }
                fresh
            }
            Split::Valid | Split::Test => {
                let lt = LabeledTriple { triple, label };
                let (seen, out) = if split == Split::Valid {
                    (&mut self.seen_valid, &mut self.valid)
                } else {
                    (&mut self.seen_test, &mut self.test)
                };
                let fresh = seen.insert(lt);
                if fresh {
                    out.push(lt);
                }
                fresh
            }
        }
    }

    pub fn build(self) -> Result<KgStore> {
        if self.train.is_empty() {
            return Err(Error::EmptyTrain);
        }
        Ok(KgStore::assemble(
            self.entities,
            self.relations,
            self.train,
            self.valid,
            self.test,
            HashMap::new(),
        ))
    }
}

/// Immutable indexed triple collection.
#[derive(Debug, Clone)]
pub struct KgStore {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<LabeledTriple>,
    test: Vec<LabeledTriple>,
    by_relation: Vec<Vec<u32>>,
    by_head: Vec<Vec<u32>>,
    known: HashSet<Triple>,
    descriptions: HashMap<EntityId, String>,
}

impl KgStore {
    fn assemble(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<LabeledTriple>,
        test: Vec<LabeledTriple>,
        descriptions: HashMap<EntityId, String>,
    ) -> Self {
        let mut by_relation = vec![Vec::new(); relations.len()];
        let mut by_head = vec![Vec::new(); entities.len()];
        for (i, t) in train.iter().enumerate() {
            by_relation[t.relation.index()].push(i as u32);
            by_head[t.head.index()].push(i as u32);
        }
        let known = train
            .iter()
            .copied()
            .chain(valid.iter().chain(&test).filter(|lt| lt.is_true_fact()).map(|lt| lt.triple))
            .collect();
        Self {
            entities,
            relations,
            train,
            valid,
            test,
            by_relation,
            by_head,
            known,
            descriptions,
        }
    }

    /// Reads tab-separated triple files. `valid` and `test` may be absent.
    pub fn ingest(train: &Path, valid: Option<&Path>, test: Option<&Path>, options: &IngestOptions<'_>) -> Result<Self> {
        let mut builder = StoreBuilder::new();
        read_triple_file(&mut builder, train, Split::Train)?;
        if let Some(p) = valid {
            read_triple_file(&mut builder, p, Split::Valid)?;
        }
        if let Some(p) = test {
            read_triple_file(&mut builder, p, Split::Test)?;
        }
        let mut store = builder.build()?;
        if let Some(p) = options.descriptions {
            store.descriptions = read_descriptions(p, &store.entities)?;
        }
        Ok(store)
    }

    pub fn counts(&self) -> StoreCounts {
        StoreCounts {
            relations: self.relations.len(),
            entities: self.entities.len(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[LabeledTriple] {
        &self.valid
    }

    pub fn test(&self) -> &[LabeledTriple] {
        &self.test
    }

    pub fn split(&self, split: Split) -> Vec<LabeledTriple> {
        match split {
            Split::Train => self
                .train
                .iter()
                .map(|&triple| LabeledTriple { triple, label: None })
                .collect(),
            Split::Valid => self.valid.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).unwrap_or("")
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0).unwrap_or("")
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn description(&self, id: EntityId) -> Option<&str> {
        self.descriptions.get(&id).map(String::as_str)
    }

    /// Indices into [`train`](Self::train) of the facts with relation `r` (F_r).
    pub fn facts_with_relation(&self, r: RelationId) -> &[u32] {
        self.by_relation.get(r.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Indices into [`train`](Self::train) of the facts whose head is `h`.
    pub fn facts_with_head(&self, h: EntityId) -> &[u32] {
        self.by_head.get(h.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of training facts per relation id.
    pub fn relation_frequencies(&self) -> Vec<usize> {
        self.by_relation.iter().map(Vec::len).collect()
    }

    /// Membership over every split. Lines labeled `-1` are known-false and
    /// are not members.
    pub fn contains(&self, triple: &Triple) -> Result<bool> {
        self.check_triple(triple)?;
        Ok(self.known.contains(triple))
    }

    /// Same as [`contains`](Self::contains) for ids already known to be valid.
    pub fn is_known(&self, triple: &Triple) -> bool {
        self.known.contains(triple)
    }

    pub fn check_triple(&self, triple: &Triple) -> Result<()> {
        for e in [triple.head, triple.tail] {
            if e.index() >= self.entities.len() {
                return Err(Error::UnknownId { kind: "entity", id: e.0 });
            }
        }
        if triple.relation.index() >= self.relations.len() {
            return Err(Error::UnknownId {
                kind: "relation",
                id: triple.relation.0,
            });
        }
        Ok(())
    }

    /// Adds `(t, r__inv, h)` for every training fact `(h, r, t)`.
    pub fn add_reverse_relations(&self) -> Result<KgStore> {
        if let Some(label) = self.relations.labels().iter().find(|l| l.ends_with(REVERSE_SUFFIX)) {
            return Err(Error::ReverseSuffixCollision(label.clone()));
        }
        let mut relations = self.relations.clone();
        let offset = self.relations.len() as u32;
        for label in self.relations.labels() {
            relations.intern(&format!("{label}{REVERSE_SUFFIX}"));
        }
        let mut train = self.train.clone();
        train.extend(
            self.train
                .iter()
                .map(|t| Triple::new(t.tail, RelationId(t.relation.0 + offset), t.head)),
        );
        Ok(KgStore::assemble(
            self.entities.clone(),
            relations,
            train,
            self.valid.clone(),
            self.test.clone(),
            self.descriptions.clone(),
        ))
    }

    /// Relations with strictly fewer than `max_facts` training facts.
    pub fn few_shot_relations(&self, max_facts: usize) -> FewShotSlice {
        let freq = self.relation_frequencies();
        let relations: Vec<RelationId> = freq
            .iter()
            .enumerate()
            .filter(|&(_, &n)| n < max_facts)
            .map(|(r, _)| RelationId(r as u32))
            .collect();
        let covered: usize = relations.iter().map(|r| freq[r.index()]).sum();
        let in_train = freq.iter().filter(|&&n| n > 0).count();
        let slice_in_train = relations.iter().filter(|r| freq[r.index()] > 0).count();
        FewShotSlice {
            max_facts,
            instance_fraction: ratio(covered, self.train.len()),
            relation_fraction: ratio(relations.len(), freq.len()),
            relations_in_train: slice_in_train,
            train_relation_fraction: ratio(slice_in_train, in_train),
            relations,
        }
    }

    /// Binary persistence.
    pub fn save(&self, path: &Path, config_hash: u64) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_header(&mut w, STORE_MAGIC, STORE_VERSION, config_hash)?;
        for vocab in [&self.entities, &self.relations] {
            binio::write_u64(&mut w, vocab.len() as u64)?;
            for l in vocab.labels() {
                binio::write_str(&mut w, l)?;
            }
        }
        binio::write_u64(&mut w, self.train.len() as u64)?;
        for t in &self.train {
            binio::write_u32_slice(&mut w, &[t.head.0, t.relation.0, t.tail.0])?;
        }
        for split in [&self.valid, &self.test] {
            binio::write_u64(&mut w, split.len() as u64)?;
            for lt in split.iter() {
                let t = lt.triple;
                binio::write_u32_slice(&mut w, &[t.head.0, t.relation.0, t.tail.0])?;
                binio::write_u8(
                    &mut w,
                    match lt.label {
                        None => 0,
                        Some(Label::Positive) => 1,
                        Some(Label::Negative) => 2,
                    },
                )?;
            }
        }
        let mut desc: Vec<_> = self.descriptions.iter().collect();
        desc.sort_by_key(|(id, _)| **id);
        binio::write_u64(&mut w, desc.len() as u64)?;
        for (id, text) in desc {
            binio::write_u32(&mut w, id.0)?;
            binio::write_str(&mut w, text)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a store written by [`save`](Self::save); returns it with the
    /// config hash recorded in its header.
    pub fn load(path: &Path) -> Result<(KgStore, u64)> {
        let display = path.display().to_string();
        let mut r = BufReader::new(File::open(path)?);
        let header = binio::read_header(&mut r, STORE_MAGIC, &display)?;
        if header.version != STORE_VERSION {
            return Err(Error::Format {
                path: display,
                message: format!("unsupported store version {}", header.version),
            });
        }
        let mut vocabs = [Vocab::default(), Vocab::default()];
        for vocab in vocabs.iter_mut() {
            let n = binio::read_u64(&mut r)?;
            for _ in 0..n {
                vocab.intern(&binio::read_str(&mut r)?);
            }
        }
        let [entities, relations] = vocabs;
        let n = binio::read_u64(&mut r)? as usize;
        let raw = binio::read_u32_vec(&mut r, n * 3)?;
        let train: Vec<Triple> = raw
            .chunks_exact(3)
            .map(|c| Triple::new(EntityId(c[0]), RelationId(c[1]), EntityId(c[2])))
            .collect();
        let mut eval_splits = [Vec::new(), Vec::new()];
        for split in eval_splits.iter_mut() {
            let n = binio::read_u64(&mut r)?;
            for _ in 0..n {
                let c = binio::read_u32_vec(&mut r, 3)?;
                let label = match binio::read_u8(&mut r)? {
                    0 => None,
                    1 => Some(Label::Positive),
                    2 => Some(Label::Negative),
                    other => {
                        return Err(Error::Format {
                            path: display,
                            message: format!("bad label tag {other}"),
                        })
                    }
                };
                split.push(LabeledTriple {
                    triple: Triple::new(EntityId(c[0]), RelationId(c[1]), EntityId(c[2])),
                    label,
                });
            }
        }
        let [valid, test] = eval_splits;
        let n = binio::read_u64(&mut r)?;
        let mut descriptions = HashMap::new();
        for _ in 0..n {
            let id = EntityId(binio::read_u32(&mut r)?);
            descriptions.insert(id, binio::read_str(&mut r)?);
        }
        let store = KgStore::assemble(entities, relations, train, valid, test, descriptions);
        for t in store.train.iter().chain(store.valid.iter().chain(&store.test).map(|lt| &lt.triple)) {
            store.check_triple(t).map_err(|e| Error::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        Ok((store, header.config_hash))
    }

    /// Writes the splits back out as tab-separated triple files.
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("train.txt"))?);
        for t in &self.train {
            writeln!(w, "{}", self.format_triple(t))?;
        }
        w.flush()?;
        for (name, split) in [("valid.txt", &self.valid), ("test.txt", &self.test)] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            for lt in split.iter() {
                match lt.label {
                    Some(l) => writeln!(w, "{}\t{}", self.format_triple(&lt.triple), l.sign())?,
                    None => writeln!(w, "{}", self.format_triple(&lt.triple))?,
                }
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn format_triple(&self, t: &Triple) -> String {
        format!(
            "{}\t{}\t{}",
            self.entity_label(t.head),
            self.relation_label(t.relation),
            self.entity_label(t.tail)
        )
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn read_triple_file(builder: &mut StoreBuilder, path: &Path, split: Split) -> Result<()> {
    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: display.clone(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let label = match fields.len() {
            3 => None,
            4 => Some(match fields[3].trim() {
                "1" | "+1" => Label::Positive,
                "-1" => Label::Negative,
                other => return Err(parse_err(format!("label must be 1 or -1, found `{other}`"))),
            }),
            n => return Err(parse_err(format!("expected 3 or 4 tab-separated fields, found {n}"))),
        };
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(parse_err("empty field".to_string()));
        }
        if split == Split::Train && label == Some(Label::Negative) {
            return Err(parse_err("negative triple in train split".to_string()));
        }
        builder.push(split, fields[0], fields[1], fields[2], label);
    }
    Ok(())
}

fn read_descriptions(path: &Path, entities: &Vocab) -> Result<HashMap<EntityId, String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, text)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "expected `entity<TAB>description`".to_string(),
            });
        };
        if let Some(id) = entities.get(label) {
            out.insert(EntityId(id), text.trim().to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn small() -> KgStore {
        let mut b = StoreBuilder::new();
        b.push(Split::Train, "A", "partOf", "B", None);
        b.push(Split::Train, "B", "partOf", "C", None);
        b.push(Split::Train, "A", "near", "C", None);
        b.push(Split::Test, "C", "near", "A", None);
        b.push(Split::Test, "C", "partOf", "A", Some(Label::Negative));
        b.build().unwrap()
    }

    #[test]
    fn single_fact_counts() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "a\tr\tb\n");
        let store = KgStore::ingest(&train, None, None, &IngestOptions::default()).unwrap();
        assert_eq!(store.counts().as_tuple(), (1, 2, 1, 0, 0));
    }

    #[test]
    fn duplicates_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "a\tr\tb\na\tr\tb\nb\tr\ta\n");
        let store = KgStore::ingest(&train, None, None, &IngestOptions::default()).unwrap();
        assert_eq!(store.counts().train, 2);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "a\tr\tb\na\tr\n");
        match KgStore::ingest(&train, None, None, &IngestOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let test = write(dir.path(), "test.txt", "a\tr\tb\t0\n");
        match KgStore::ingest(&train, None, Some(&test), &IngestOptions::default()) {
            Err(Error::Parse { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let ok_train = write(dir.path(), "t2.txt", "a\tr\tb\n");
        match KgStore::ingest(&ok_train, None, Some(&test), &IngestOptions::default()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_train_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "");
        assert!(matches!(
            KgStore::ingest(&train, None, None, &IngestOptions::default()),
            Err(Error::EmptyTrain)
        ));
    }

    #[test]
    fn membership_covers_all_splits() {
        let s = small();
        let id = |l: &str| s.entity_id(l).unwrap();
        let near = s.relation_id("near").unwrap();
        let part = s.relation_id("partOf").unwrap();
        assert!(s.contains(&Triple::new(id("A"), part, id("B"))).unwrap());
        assert!(s.contains(&Triple::new(id("C"), near, id("A"))).unwrap());
        assert!(!s.contains(&Triple::new(id("B"), near, id("A"))).unwrap());
        // labeled false in test
        assert!(!s.contains(&Triple::new(id("C"), part, id("A"))).unwrap());
        assert!(s.contains(&Triple::new(EntityId(99), part, id("A"))).is_err());
    }

    #[test]
    fn reverse_relations_double_train() {
        let s = small();
        let r = s.add_reverse_relations().unwrap();
        assert_eq!(r.counts().train, 2 * s.counts().train);
        assert_eq!(r.num_relations(), 2 * s.num_relations());
        let inv = r.relation_id("partOf__inv").unwrap();
        let t = Triple::new(r.entity_id("B").unwrap(), inv, r.entity_id("A").unwrap());
        assert!(r.contains(&t).unwrap());
        assert_eq!(&r.train()[..s.train().len()], s.train());
        assert!(matches!(
            r.add_reverse_relations(),
            Err(Error::ReverseSuffixCollision(_))
        ));
    }

    #[test]
    fn few_shot_zero_is_empty() {
        let s = small();
        let slice = s.few_shot_relations(0);
        assert!(slice.relations.is_empty());
        assert_eq!(slice.instance_fraction, 0.0);
        let slice = s.few_shot_relations(2);
        assert_eq!(slice.relations, vec![s.relation_id("near").unwrap()]);
        assert!((slice.instance_fraction - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = small();
        let p = dir.path().join("store.bin");
        s.save(&p, 77).unwrap();
        let (l, hash) = KgStore::load(&p).unwrap();
        assert_eq!(hash, 77);
        assert_eq!(l.counts(), s.counts());
        assert_eq!(l.entities(), s.entities());
        assert_eq!(l.train(), s.train());
        assert_eq!(l.test(), s.test());
    }

    #[test]
    fn descriptions_attach_to_known_entities() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "a\tr\tb\n");
        let desc = write(dir.path(), "desc.txt", "a\tthe first letter\nzzz\tignored\n");
        let store = KgStore::ingest(&train, None, None, &IngestOptions { descriptions: Some(&desc) }).unwrap();
        assert_eq!(store.description(store.entity_id("a").unwrap()), Some("the first letter"));
        assert_eq!(store.description(store.entity_id("b").unwrap()), None);
    }
}
