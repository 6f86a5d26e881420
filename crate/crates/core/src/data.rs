//! Judgment logs: ingestion, canonical pair orientation, aggregation and
//! margin estimation under the three tie encodings.
//!
//! A pair of models is always keyed by its lexicographically ordered names
//! ([`PairKey`]). "Second wins" is the positive outcome throughout, so
//! `p_hat` is the probability that the lexicographically larger model is
//! preferred.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result, RowError};

/// Column names shared by the CSV header and the JSONL object keys.
pub const COLUMNS: [&str; 6] = [
    "model_a",
    "model_b",
    "prompt_id",
    "prompt_type",
    "outcome",
    "timestamp",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    AWins,
    BWins,
    Tie,
    /// Neither response acceptable. Aggregated as a tie, kept distinct in
    /// the raw record.
    BothBad,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::AWins => "A_WINS",
            Outcome::BWins => "B_WINS",
            Outcome::Tie => "TIE",
            Outcome::BothBad => "BOTH_BAD",
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A_WINS" => Ok(Outcome::AWins),
            "B_WINS" => Ok(Outcome::BWins),
            "TIE" => Ok(Outcome::Tie),
            "BOTH_BAD" => Ok(Outcome::BothBad),
            other => Err(Error::Format(format!("unknown outcome token {other:?}"))),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub model_a: String,
    pub model_b: String,
    pub prompt_id: String,
    pub prompt_type: Option<String>,
    pub outcome: Outcome,
    /// Monotone sort key (e.g. epoch seconds). Records without one sort
    /// after all timestamped records, in input order.
    pub timestamp: Option<f64>,
}

impl JudgmentRecord {
    pub fn new(
        model_a: impl Into<String>,
        model_b: impl Into<String>,
        prompt_id: impl Into<String>,
        outcome: Outcome,
    ) -> Self {
        Self {
            model_a: model_a.into(),
            model_b: model_b.into(),
            prompt_id: prompt_id.into(),
            prompt_type: None,
            outcome,
            timestamp: None,
        }
    }

    pub fn with_prompt_type(mut self, prompt_type: impl Into<String>) -> Self {
        self.prompt_type = Some(prompt_type.into());
        self
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = Some(timestamp);
        self
    }

    pub fn pair(&self) -> PairKey {
        PairKey::new(&self.model_a, &self.model_b).expect("records never pair a model with itself")
    }

    /// The outcome relative to the canonical pair orientation.
    pub fn side(&self) -> Side {
        let a_is_first = self.model_a < self.model_b;
        match (self.outcome, a_is_first) {
            (Outcome::AWins, true) | (Outcome::BWins, false) => Side::First,
            (Outcome::AWins, false) | (Outcome::BWins, true) => Side::Second,
            (Outcome::Tie | Outcome::BothBad, _) => Side::Tie,
        }
    }
}

/// Outcome of a judgment in canonical orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
    Tie,
}

/// Unordered model pair, stored with `first < second`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    first: String,
    second: String,
}

impl PairKey {
    pub fn new(a: &str, b: &str) -> Result<Self> {
        match a.cmp(b) {
            std::cmp::Ordering::Less => Ok(Self { first: a.to_owned(), second: b.to_owned() }),
            std::cmp::Ordering::Greater => Ok(Self { first: b.to_owned(), second: a.to_owned() }),
            std::cmp::Ordering::Equal => {
                Err(Error::Usage(format!("a pair needs two distinct models, got {a:?} twice")))
            }
        }
    }

    pub fn first(&self) -> &str {
        &self.first
    }

    pub fn second(&self) -> &str {
        &self.second
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.first, self.second)
    }
}

impl FromStr for PairKey {
    type Err = Error;

    /// Accepts `a,b` or `a|b`, in either order.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('|')
            .or_else(|| s.split_once(','))
            .ok_or_else(|| Error::Usage(format!("pair must be written as `a,b`, got {s:?}")))?;
        PairKey::new(a.trim(), b.trim())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCounts {
    pub wins_first: u64,
    pub wins_second: u64,
    pub ties: u64,
}

impl PromptCounts {
    pub fn decisive(&self) -> u64 {
        self.wins_first + self.wins_second
    }

    fn add(&mut self, side: Side) {
        match side {
            Side::First => self.wins_first += 1,
            Side::Second => self.wins_second += 1,
            Side::Tie => self.ties += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAggregate {
    pub pair: PairKey,
    pub wins_first: u64,
    pub wins_second: u64,
    pub ties: u64,
    pub per_prompt: BTreeMap<String, PromptCounts>,
}

impl PairAggregate {
    pub fn empty(pair: PairKey) -> Self {
        Self { pair, wins_first: 0, wins_second: 0, ties: 0, per_prompt: BTreeMap::new() }
    }

    /// An aggregate with no per-prompt breakdown, e.g. pilot counts.
    pub fn from_counts(pair: PairKey, wins_first: u64, wins_second: u64, ties: u64) -> Self {
        Self { pair, wins_first, wins_second, ties, per_prompt: BTreeMap::new() }
    }

    pub fn decisive(&self) -> u64 {
        self.wins_first + self.wins_second
    }

    pub fn total(&self) -> u64 {
        self.decisive() + self.ties
    }

    fn add(&mut self, prompt_id: &str, side: Side) {
        match side {
            Side::First => self.wins_first += 1,
            Side::Second => self.wins_second += 1,
            Side::Tie => self.ties += 1,
        }
        self.per_prompt.entry(prompt_id.to_owned()).or_default().add(side);
    }

    /// The same counts with the roles of the two models exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            pair: self.pair.clone(),
            wins_first: self.wins_second,
            wins_second: self.wins_first,
            ties: self.ties,
            per_prompt: self
                .per_prompt
                .iter()
                .map(|(k, c)| {
                    (k.clone(), PromptCounts { wins_first: c.wins_second, wins_second: c.wins_first, ties: c.ties })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TiePolicy {
    /// Condition on decisive judgments only.
    #[default]
    Drop,
    /// A tie is half a vote for each side.
    Half,
    /// Ties count against the canonical first model, i.e. as wins for the
    /// second.
    Pessimistic,
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drop" => Ok(TiePolicy::Drop),
            "half" => Ok(TiePolicy::Half),
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            _ => Err(Error::Usage(format!("unknown tie policy {s:?} (drop|half|pessimistic)"))),
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::Drop => "drop",
            TiePolicy::Half => "half",
            TiePolicy::Pessimistic => "pessimistic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub pair: PairKey,
    /// Estimated probability that the second model is preferred.
    pub p_hat: f64,
    pub delta_hat: f64,
    pub n_decisive: u64,
    pub n_effective: f64,
    pub tie_policy: TiePolicy,
}

pub fn estimate_margin(agg: &PairAggregate, policy: TiePolicy) -> Result<MarginEstimate> {
    let (w1, w2, t) = (agg.wins_first as f64, agg.wins_second as f64, agg.ties as f64);
    let (num, den) = match policy {
        TiePolicy::Drop => (w2, w1 + w2),
        TiePolicy::Half => (w2 + t / 2.0, w1 + w2 + t),
        TiePolicy::Pessimistic => (w2 + t, w1 + w2 + t),
    };
    if den == 0.0 {
        return Err(Error::Undefined(format!(
            "pair {} has no judgments usable under the {policy} tie policy",
            agg.pair
        )));
    }
    let p_hat = num / den;
    Ok(MarginEstimate {
        pair: agg.pair.clone(),
        p_hat,
        delta_hat: p_hat - 0.5,
        n_decisive: agg.decisive(),
        n_effective: den,
        tie_policy: policy,
    })
}

/// An immutable, ordered collection of judgments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<JudgmentRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            _ => Err(Error::Usage(format!("unknown format {s:?} (csv|jsonl)"))),
        }
    }
}

impl Dataset {
    /// Builds a dataset, rejecting self-pairings.
    pub fn from_records(records: Vec<JudgmentRecord>) -> Result<Self> {
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.model_a == r.model_b) {
            return Err(Error::Usage(format!("record {i} pairs {:?} with itself", r.model_a)));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[JudgmentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices in chronological order: timestamp ascending, then
    /// input order; untimestamped records last.
    pub fn chronological(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.sort_by(|&i, &j| {
            let (a, b) = (self.records[i].timestamp, self.records[j].timestamp);
            let by_time = match (a, b) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            };
            by_time.then(i.cmp(&j))
        });
        idx
    }

    pub fn aggregate(&self, pair: &PairKey) -> PairAggregate {
        let mut agg = PairAggregate::empty(pair.clone());
        for r in &self.records {
            if &r.pair() == pair {
                agg.add(&r.prompt_id, r.side());
            }
        }
        agg
    }

    pub fn aggregates(&self) -> BTreeMap<PairKey, PairAggregate> {
        let mut out: BTreeMap<PairKey, PairAggregate> = BTreeMap::new();
        for r in &self.records {
            let key = r.pair();
            out.entry(key.clone())
                .or_insert_with(|| PairAggregate::empty(key))
                .add(&r.prompt_id, r.side());
        }
        out
    }

    /// Decisive outcomes of one pair in chronological order
    /// (`true` = second model preferred).
    pub fn decisive_stream(&self, pair: &PairKey) -> Vec<bool> {
        self.chronological()
            .into_iter()
            .map(|i| &self.records[i])
            .filter(|r| &r.pair() == pair)
            .filter_map(|r| match r.side() {
                Side::First => Some(false),
                Side::Second => Some(true),
                Side::Tie => None,
            })
            .collect()
    }

    /// Decisive judgments of one pair split by prompt type, as
    /// `(second-model wins, first-model wins)`. Records without a type are
    /// grouped under `""`.
    pub fn decisive_by_type(&self, pair: &PairKey) -> BTreeMap<String, (u64, u64)> {
        let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for r in self.records.iter().filter(|r| &r.pair() == pair) {
            let slot = out.entry(r.prompt_type.clone().unwrap_or_default()).or_default();
            match r.side() {
                Side::Second => slot.0 += 1,
                Side::First => slot.1 += 1,
                Side::Tie => {}
            }
        }
        out.retain(|_, (a, b)| *a + *b > 0);
        out
    }

    pub fn ingest<R: Read>(source: R, format: Format) -> Result<Self> {
        match format {
            Format::Csv => read_csv(source),
            Format::Jsonl => read_jsonl(std::io::BufReader::new(source)),
        }
    }

    pub fn write<W: Write>(&self, sink: W, format: Format) -> Result<()> {
        match format {
            Format::Csv => write_csv(&self.records, sink),
            Format::Jsonl => write_jsonl(&self.records, sink),
        }
    }
}

/// Pairs whose decisive-judgment count reaches `min_decisive`.
pub fn well_sampled_pairs(dataset: &Dataset, min_decisive: u64) -> Vec<PairKey> {
    dataset
        .aggregates()
        .into_values()
        .filter(|a| a.decisive() >= min_decisive)
        .map(|a| a.pair)
        .collect()
}

/// Margins of every pair with at least `min_decisive` decisive judgments.
pub fn pair_margins(dataset: &Dataset, policy: TiePolicy, min_decisive: u64) -> Result<Vec<MarginEstimate>> {
    dataset
        .aggregates()
        .into_values()
        .filter(|a| a.decisive() >= min_decisive.max(1))
        .map(|a| estimate_margin(&a, policy))
        .collect()
}

/// Keeps only the chronologically first judgment of every
/// `(pair, prompt_id)`; retained records stay in input order.
pub fn unique_prompt_restrict(dataset: &Dataset) -> Dataset {
    let mut seen: HashSet<(PairKey, &str)> = HashSet::new();
    let mut keep = vec![false; dataset.records.len()];
    for i in dataset.chronological() {
        let r = &dataset.records[i];
        if seen.insert((r.pair(), r.prompt_id.as_str())) {
            keep[i] = true;
        }
    }
    Dataset {
        records: dataset
            .records
            .iter()
            .zip(keep)
            .filter(|&(_, k)| k)
            .map(|(r, _)| r.clone())
            .collect(),
    }
}

fn build_record(
    line: usize,
    model_a: &str,
    model_b: &str,
    prompt_id: &str,
    prompt_type: Option<&str>,
    outcome: &str,
    timestamp: Option<f64>,
) -> std::result::Result<JudgmentRecord, RowError> {
    let err = |message: String| RowError { line, message };
    if model_a.is_empty() || model_b.is_empty() {
        return Err(err("empty model name".into()));
    }
    if model_a == model_b {
        return Err(err(format!("model {model_a:?} paired with itself")));
    }
    let outcome = outcome
        .trim()
        .parse::<Outcome>()
        .map_err(|_| err(format!("unknown outcome token {outcome:?}")))?;
    Ok(JudgmentRecord {
        model_a: model_a.to_owned(),
        model_b: model_b.to_owned(),
        prompt_id: prompt_id.to_owned(),
        prompt_type: prompt_type.filter(|s| !s.is_empty()).map(str::to_owned),
        outcome,
        timestamp,
    })
}

fn read_csv<R: Read>(source: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(Error::Format(format!("unreadable CSV header: {e}"))),
    };
    if headers.is_empty() {
        return Err(Error::Format("missing CSV header".into()));
    }
    let mut seen = HashSet::new();
    for h in headers.iter() {
        if !seen.insert(h) {
            return Err(Error::Format(format!("duplicate header column {h:?}")));
        }
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing header column {name:?}")))
    };
    let idx: Vec<usize> = COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(idx[i]).unwrap_or("");
        let timestamp = match field(5).trim() {
            "" => None,
            s => match s.parse::<f64>() {
                Ok(t) if t.is_finite() => Some(t),
                _ => {
                    errors.push(RowError { line, message: format!("bad timestamp {s:?}") });
                    continue;
                }
            },
        };
        match build_record(line, field(0), field(1), field(2), Some(field(3)), field(4), timestamp) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(Dataset { records })
    } else {
        Err(Error::MalformedRows(errors))
    }
}

fn json_string(obj: &Map<String, Value>, key: &str, nullable: bool) -> std::result::Result<Option<String>, String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(Value::Null) | None if nullable => Ok(None),
        Some(Value::Null) | None => Err(format!("missing field {key:?}")),
        Some(other) => Err(format!("field {key:?} has unsupported value {other}")),
    }
}

fn read_jsonl<R: BufRead>(source: R) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => m,
            Ok(_) => {
                errors.push(RowError { line: line_no, message: "expected a JSON object".into() });
                continue;
            }
            Err(e) => {
                errors.push(RowError { line: line_no, message: format!("invalid JSON: {e}") });
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<JudgmentRecord, String> {
            let a = json_string(&obj, "model_a", false)?.unwrap_or_default();
            let b = json_string(&obj, "model_b", false)?.unwrap_or_default();
            let pid = json_string(&obj, "prompt_id", false)?.unwrap_or_default();
            let ptype = json_string(&obj, "prompt_type", true)?;
            let outcome = json_string(&obj, "outcome", false)?.unwrap_or_default();
            let ts = match obj.get("timestamp") {
                None | Some(Value::Null) => None,
                Some(Value::Number(n)) => n.as_f64(),
                Some(Value::String(s)) if s.is_empty() => None,
                Some(Value::String(s)) => {
                    Some(s.parse::<f64>().map_err(|_| format!("bad timestamp {s:?}"))?)
                }
                Some(other) => return Err(format!("bad timestamp {other}")),
            };
            build_record(line_no, &a, &b, &pid, ptype.as_deref(), &outcome, ts).map_err(|e| e.message)
        })();
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => errors.push(RowError { line: line_no, message }),
        }
    }
    if errors.is_empty() {
        Ok(Dataset { records })
    } else {
        Err(Error::MalformedRows(errors))
    }
}

fn write_csv<W: Write>(records: &[JudgmentRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in records {
        let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([
            r.model_a.as_str(),
            r.model_b.as_str(),
            r.prompt_id.as_str(),
            r.prompt_type.as_deref().unwrap_or(""),
            r.outcome.as_str(),
            ts.as_str(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_jsonl<W: Write>(records: &[JudgmentRecord], mut sink: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(sink, "{line}")?;
    }
    Ok(())
}
