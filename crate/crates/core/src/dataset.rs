//! Heartbeat records: beat-CSV ingestion, stratified splitting, SMOTE class
//! balancing, and a synthetic ECG-like beat generator.
//!
//! Beat-CSV: one beat per line, `label,s1,...,s260`, where `label` is one of
//! `N S V F Q` and the samples are decimal floats. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{BEAT_LEN, NUM_CLASSES};
use crate::tensor::Tensor;

/// AAMI heartbeat class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BeatClass {
    /// Normal.
    N,
    /// Supraventricular ectopic.
    S,
    /// Ventricular ectopic.
    V,
    /// Fusion.
    F,
    /// Unknown / unclassifiable.
    Q,
}

impl BeatClass {
    pub const ALL: [BeatClass; NUM_CLASSES] = [BeatClass::N, BeatClass::S, BeatClass::V, BeatClass::F, BeatClass::Q];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn token(self) -> char {
        match self {
            BeatClass::N => 'N',
            BeatClass::S => 'S',
            BeatClass::V => 'V',
            BeatClass::F => 'F',
            BeatClass::Q => 'Q',
        }
    }
}

impl fmt::Display for BeatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.token())
    }
}

impl FromStr for BeatClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "N" => Ok(BeatClass::N),
            "S" => Ok(BeatClass::S),
            "V" => Ok(BeatClass::V),
            "F" => Ok(BeatClass::F),
            "Q" => Ok(BeatClass::Q),
            other => Err(format!("unknown label token {other:?}")),
        }
    }
}

/// Where a record came from. SMOTE records keep the indices (into the set
/// that was balanced) of the pair they interpolate and the mixing weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Origin {
    Real,
    Smote { base: usize, neighbor: usize, lambda: f64 },
    Generated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatRecord {
    samples: Vec<f64>,
    pub label: BeatClass,
    pub origin: Origin,
}

impl BeatRecord {
    pub fn new(samples: Vec<f64>, label: BeatClass, origin: Origin) -> Result<Self> {
        if samples.len() != BEAT_LEN {
            return Err(Error::InvalidTensor(format!("beat has {} samples, expected {BEAT_LEN}", samples.len())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor("beat contains a non-finite sample".into()));
        }
        Ok(Self { samples, label, origin })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, BEAT_LEN], self.samples.clone()).expect("beat length checked")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeatSet {
    records: Vec<BeatRecord>,
}

impl BeatSet {
    pub fn new(records: Vec<BeatRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[BeatRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<BeatRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record count per class, indexed by [`BeatClass::index`].
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for r in &self.records {
            h[r.label.index()] += 1;
        }
        h
    }

    /// Beats as `[1, 260]` tensors paired with class indices.
    pub fn examples(&self) -> Vec<(Tensor, usize)> {
        self.records.iter().map(|r| (r.to_tensor(), r.label.index())).collect()
    }
}

pub fn load_beats(path: impl AsRef<Path>) -> Result<BeatSet> {
    read_beats(File::open(path)?)
}

pub fn read_beats(reader: impl Read) -> Result<BeatSet> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |cause: String| Error::Parse { line: line_no, cause };
        let mut fields = trimmed.split(',');
        let label: BeatClass = fields.next().unwrap_or_default().parse().map_err(parse_err)?;
        let mut samples = Vec::with_capacity(BEAT_LEN);
        for (j, field) in fields.enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("field {} is not a number: {:?}", j + 2, field.trim())))?;
            if !v.is_finite() {
                return Err(parse_err(format!("field {} is not finite", j + 2)));
            }
            samples.push(v);
        }
        if samples.len() != BEAT_LEN {
            return Err(parse_err(format!("expected {BEAT_LEN} samples, found {}", samples.len())));
        }
        records.push(BeatRecord { samples, label, origin: Origin::Real });
    }
    Ok(BeatSet::new(records))
}

pub fn save_beats(set: &BeatSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_beats(set, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes beat-CSV; floats use the shortest representation that parses back
/// to the same value.
pub fn write_beats(set: &BeatSet, mut w: impl Write) -> Result<()> {
    for r in &set.records {
        write!(w, "{}", r.label)?;
        for v in &r.samples {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Train / validation / test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: BeatSet,
    pub val: BeatSet,
    pub test: BeatSet,
    pub warnings: Vec<String>,
}

/// Integer allocation of `n` items across `fractions` by largest remainder
/// (ties go to the earlier partition).
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn canonical_cmp(a: &BeatRecord, b: &BeatRecord) -> std::cmp::Ordering {
    a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Per-class proportional split. Records are first put in a canonical order
/// and then shuffled with a seeded RNG, so the result depends only on the
/// multiset of input records and the seed.
pub fn stratified_split(set: &BeatSet, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|&f| f.is_nan() || f <= 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions {fractions:?} must be positive and sum to 1")));
    }
    let mut parts: [Vec<BeatRecord>; 3] = Default::default();
    let mut warnings = Vec::new();
    for class in BeatClass::ALL {
        let mut members: Vec<BeatRecord> = set.records.iter().filter(|r| r.label == class).cloned().collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < fractions.len() {
            warnings.push(format!(
                "class {class} has {} record(s), fewer than the {} partitions",
                members.len(),
                fractions.len()
            ));
        }
        members.sort_by(canonical_cmp);
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(class.index() as u64 + 1)));
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), &fractions);
        let mut it = members.into_iter();
        for (part, &count) in parts.iter_mut().zip(&counts) {
            part.extend(it.by_ref().take(count));
        }
    }
    let [train, val, test] = parts;
    Ok(Split { train: BeatSet::new(train), val: BeatSet::new(val), test: BeatSet::new(test), warnings })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Over-samples every minority class up to the majority count by
/// interpolating between a member and one of its `k` nearest same-class
/// neighbours. Original records are kept unchanged at the front; synthetic
/// ones are appended. Absent classes stay absent.
pub fn smote_balance(set: &BeatSet, k: usize, seed: u64) -> Result<BeatSet> {
    if k == 0 {
        return Err(Error::InvalidConfig("SMOTE needs k >= 1".into()));
    }
    let hist = set.histogram();
    let target = hist.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.records.clone();
    for class in BeatClass::ALL {
        let count = hist[class.index()];
        if count == 0 || count == target {
            continue;
        }
        if count < 2 {
            return Err(Error::TooFewForSmote { class: class.token(), count });
        }
        let members: Vec<usize> = (0..set.len()).filter(|&i| set.records[i].label == class).collect();
        let kk = k.min(members.len() - 1);
        let neighbours: Vec<Vec<usize>> = members
            .iter()
            .map(|&i| {
                let mut others: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (squared_distance(&set.records[i].samples, &set.records[j].samples), j))
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                others.into_iter().take(kk).map(|(_, j)| j).collect()
            })
            .collect();
        for _ in count..target {
            let m = rng.gen_range(0..members.len());
            let base = members[m];
            let neighbor = neighbours[m][rng.gen_range(0..kk)];
            let lambda: f64 = rng.gen();
            out.push(interpolate(set, base, neighbor, lambda, class));
        }
    }
    Ok(BeatSet::new(out))
}

fn interpolate(set: &BeatSet, base: usize, neighbor: usize, lambda: f64, label: BeatClass) -> BeatRecord {
    let x = &set.records[base].samples;
    let y = &set.records[neighbor].samples;
    let samples = x.iter().zip(y).map(|(a, b)| a + lambda * (b - a)).collect();
    BeatRecord { samples, label, origin: Origin::Smote { base, neighbor, lambda } }
}

/// Default additive noise level for generated beats.
pub const DEFAULT_NOISE: f64 = 0.05;

/// One Gaussian wave component: centre sample, width (std-dev in samples),
/// amplitude.
type Wave = (f64, f64, f64);

/// Morphology template per class, sampled on 260 points with the R peak near
/// sample 130. Waves are P, Q, R, S, T style bumps; the classes differ in QRS
/// width, polarity of the T wave, P-wave timing and the presence of a pacing
/// spike.
fn template_waves(class: BeatClass) -> &'static [Wave] {
    match class {
        BeatClass::N => {
            &[(80.0, 9.0, 0.15), (122.0, 3.0, -0.12), (130.0, 4.0, 1.0), (138.0, 3.0, -0.22), (200.0, 14.0, 0.30)]
        }
        BeatClass::S => {
            &[(100.0, 6.0, -0.10), (122.0, 3.0, -0.10), (130.0, 4.0, 0.92), (138.0, 3.0, -0.20), (196.0, 13.0, 0.26)]
        }
        BeatClass::V => &[(128.0, 11.0, 1.15), (152.0, 9.0, -0.45), (205.0, 17.0, -0.35)],
        BeatClass::F => &[(82.0, 9.0, 0.08), (130.0, 7.0, 1.05), (146.0, 6.0, -0.32), (204.0, 15.0, -0.06)],
        BeatClass::Q => &[(112.0, 1.2, 0.75), (134.0, 9.0, 0.70), (150.0, 7.0, -0.20), (206.0, 16.0, 0.18)],
    }
}

/// Noise-free template beat for a class.
pub fn template(class: BeatClass) -> Vec<f64> {
    (0..BEAT_LEN)
        .map(|t| {
            let t = t as f64;
            template_waves(class).iter().map(|&(c, w, a)| a * (-0.5 * ((t - c) / w).powi(2)).exp()).sum()
        })
        .collect()
}

/// Generates `counts[c]` beats per class: the class template plus seeded
/// i.i.d. Gaussian noise with standard deviation `sigma`.
pub fn generate_synthetic(counts: [usize; NUM_CLASSES], sigma: f64, seed: u64) -> Result<BeatSet> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidConfig(format!("noise level {sigma} must be finite and non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let mut records = Vec::with_capacity(counts.iter().sum());
    for class in BeatClass::ALL {
        let base = template(class);
        for _ in 0..counts[class.index()] {
            let samples = base.iter().map(|&v| if sigma == 0.0 { v } else { v + noise.sample(&mut rng) }).collect();
            records.push(BeatRecord { samples, label: class, origin: Origin::Generated });
        }
    }
    Ok(BeatSet::new(records))
}
