//! Imbalance-aware augmentation planning.
//!
//! Severity ratios are normalized inverse class counts. Sources are drawn
//! uniformly; target severities follow the ratios, and a concrete target
//! image is picked uniformly inside the chosen (disease, severity) cell.
//!
//! A translated image takes the target severity for the translated disease
//! and keeps the source's labels for the other two conditions.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::PlanError;
use crate::rng::StreamRng;

pub const SEVERITY_LEVELS: usize = 4;
pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Disease {
    Dandruff,
    Sebum,
    Erythema,
}

impl Disease {
    pub const ALL: [Disease; 3] = [Disease::Dandruff, Disease::Sebum, Disease::Erythema];

    pub fn index(self) -> usize {
        match self {
            Disease::Dandruff => 0,
            Disease::Sebum => 1,
            Disease::Erythema => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Disease::Dandruff => "dandruff",
            Disease::Sebum => "sebum",
            Disease::Erythema => "erythema",
        }
    }
}

impl fmt::Display for Disease {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Image counts at severities good (0), mild (1), moderate (2), severe (3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeverityCounts(pub [u64; SEVERITY_LEVELS]);

impl SeverityCounts {
    pub fn from_severities(severities: impl IntoIterator<Item = u8>) -> Result<Self, PlanError> {
        let mut counts = [0u64; SEVERITY_LEVELS];
        for s in severities {
            *counts
                .get_mut(usize::from(s))
                .ok_or(PlanError::InvalidSeverity(s))? += 1;
        }
        Ok(Self(counts))
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Largest over smallest count; infinite when some level is empty.
    pub fn imbalance(&self) -> f64 {
        let max = *self.0.iter().max().unwrap_or(&0) as f64;
        let min = *self.0.iter().min().unwrap_or(&0) as f64;
        max / min
    }
}

/// Probability of picking each severity level as a translation target.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplingRatios(pub [f64; SEVERITY_LEVELS]);

impl SamplingRatios {
    pub fn uniform() -> Self {
        Self([1.0 / SEVERITY_LEVELS as f64; SEVERITY_LEVELS])
    }

    fn draw(&self, rng: &mut StreamRng) -> u8 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (level, &p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return level as u8;
            }
        }
        // Rounding can leave the cumulative sum a hair below 1.
        self.0
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(SEVERITY_LEVELS - 1) as u8
    }
}

/// `inv[s] = 1 / (counts[s] + ε)`, normalized to sum to one.
pub fn sampling_ratios(counts: &SeverityCounts, epsilon: f64) -> SamplingRatios {
    let mut inv = [0.0; SEVERITY_LEVELS];
    for (slot, &c) in inv.iter_mut().zip(&counts.0) {
        *slot = 1.0 / (c as f64 + epsilon);
    }
    let norm: f64 = inv.iter().sum();
    let mut ratios = [0.0; SEVERITY_LEVELS];
    for (r, v) in ratios.iter_mut().zip(inv) {
        *r = v / norm;
    }
    SamplingRatios(ratios)
}

/// One labelled image: severities for dandruff, sebum and erythema.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelRecord {
    pub id: String,
    pub severities: [u8; 3],
}

impl LabelRecord {
    pub fn severity(&self, disease: Disease) -> u8 {
        self.severities[disease.index()]
    }
}

/// The labelled dataset a plan is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelIndex {
    records: Vec<LabelRecord>,
    /// `cells[disease][severity]` lists record positions.
    cells: [[Vec<usize>; SEVERITY_LEVELS]; 3],
}

impl LabelIndex {
    pub fn new(records: Vec<LabelRecord>) -> Result<Self, PlanError> {
        let mut cells: [[Vec<usize>; SEVERITY_LEVELS]; 3] = Default::default();
        for (pos, rec) in records.iter().enumerate() {
            for d in Disease::ALL {
                let s = rec.severity(d);
                cells[d.index()]
                    .get_mut(usize::from(s))
                    .ok_or(PlanError::InvalidSeverity(s))?
                    .push(pos);
            }
        }
        Ok(Self { records, cells })
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabelRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn counts(&self, disease: Disease) -> SeverityCounts {
        let mut counts = [0u64; SEVERITY_LEVELS];
        for (slot, cell) in counts.iter_mut().zip(&self.cells[disease.index()]) {
            *slot = cell.len() as u64;
        }
        SeverityCounts(counts)
    }

    pub fn ratios(&self, disease: Disease, epsilon: f64) -> SamplingRatios {
        sampling_ratios(&self.counts(disease), epsilon)
    }

    fn cell(&self, disease: Disease, severity: u8) -> &[usize] {
        &self.cells[disease.index()][usize::from(severity)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TranslationJob {
    pub source_id: String,
    pub target_id: String,
    pub disease: Disease,
    pub target_severity: u8,
    /// Hair mask of the source image, preserved during translation.
    pub mask_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SkipReason {
    /// No draw produced a severity above the source's.
    NoHigherSeverity,
    /// Draws kept landing on cells holding only the source image.
    NoDistinctTarget,
    /// Constraints and empty cells together exhausted the retries.
    RetriesExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkippedJob {
    pub job_index: usize,
    pub source_id: String,
    pub disease: Disease,
    pub source_severity: u8,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlanOutcome {
    pub jobs: Vec<TranslationJob>,
    pub skipped: Vec<SkippedJob>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub num_jobs: usize,
    /// Only accept targets strictly more severe than the source.
    pub higher_only: bool,
    pub max_retries: usize,
    /// Diseases a job may translate; one is drawn uniformly per job.
    pub diseases: Vec<Disease>,
    /// Directory prefix for source masks; the job's mask is `<dir>/<source_id>.png`.
    pub mask_dir: String,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            num_jobs: 0,
            higher_only: true,
            max_retries: DEFAULT_MAX_RETRIES,
            diseases: Disease::ALL.to_vec(),
            mask_dir: String::from("masks"),
        }
    }
}

fn mask_path(dir: &str, id: &str) -> String {
    let mut p = String::from(dir);
    if !p.is_empty() && !p.ends_with('/') {
        p.push('/');
    }
    p.push_str(id);
    p.push_str(".png");
    p
}

enum Failure {
    NotHigher,
    EmptyCell(u8),
    OnlySource,
}

/// Draws `config.num_jobs` translation jobs. `ratios[d]` drives the target
/// severity for disease `d` (indexed by [`Disease::index`]).
pub fn plan_jobs(
    index: &LabelIndex,
    ratios: &[SamplingRatios; 3],
    config: &PlanConfig,
    rng: &mut StreamRng,
) -> Result<PlanOutcome, PlanError> {
    if index.is_empty() {
        return Err(PlanError::EmptyIndex);
    }
    let diseases = if config.diseases.is_empty() {
        &Disease::ALL[..]
    } else {
        &config.diseases[..]
    };
    let mut outcome = PlanOutcome::default();
    for job_index in 0..config.num_jobs {
        let source = &index.records()[rng.gen_range(0..index.len())];
        let disease = diseases[rng.gen_range(0..diseases.len())];
        let source_severity = source.severity(disease);

        let mut failures = Vec::with_capacity(config.max_retries);
        let mut chosen = None;
        for _ in 0..config.max_retries.max(1) {
            let severity = ratios[disease.index()].draw(rng);
            if config.higher_only && severity <= source_severity {
                failures.push(Failure::NotHigher);
                continue;
            }
            let cell = index.cell(disease, severity);
            if cell.is_empty() {
                failures.push(Failure::EmptyCell(severity));
                continue;
            }
            let candidates = cell.iter().filter(|&&p| index.records()[p].id != source.id).count();
            if candidates == 0 {
                failures.push(Failure::OnlySource);
                continue;
            }
            let pick = rng.gen_range(0..candidates);
            let target = cell
                .iter()
                .map(|&p| &index.records()[p])
                .filter(|r| r.id != source.id)
                .nth(pick)
                .expect("pick < candidates");
            chosen = Some((target, severity));
            break;
        }

        match chosen {
            Some((target, severity)) => outcome.jobs.push(TranslationJob {
                source_id: source.id.clone(),
                target_id: target.id.clone(),
                disease,
                target_severity: severity,
                mask_path: mask_path(&config.mask_dir, &source.id),
            }),
            None => {
                if let Some(Failure::EmptyCell(severity)) = failures.last() {
                    if failures.iter().all(|f| matches!(f, Failure::EmptyCell(_))) {
                        return Err(PlanError::EmptyCell {
                            disease: disease.name(),
                            severity: *severity,
                        });
                    }
                }
                let reason = if failures.iter().all(|f| matches!(f, Failure::NotHigher)) {
                    SkipReason::NoHigherSeverity
                } else if failures.iter().all(|f| matches!(f, Failure::OnlySource)) {
                    SkipReason::NoDistinctTarget
                } else {
                    SkipReason::RetriesExhausted
                };
                outcome.skipped.push(SkippedJob {
                    job_index,
                    source_id: source.id.clone(),
                    disease,
                    source_severity,
                    reason,
                });
            }
        }
    }
    Ok(outcome)
}

/// Per-disease severity counts after adding one translated image per job.
pub fn post_plan_distribution(
    index: &LabelIndex,
    jobs: &[TranslationJob],
) -> Result<[SeverityCounts; 3], PlanError> {
    let mut counts = Disease::ALL.map(|d| index.counts(d));
    for job in jobs {
        let source = index
            .get(&job.source_id)
            .ok_or_else(|| PlanError::UnknownImage(job.source_id.clone()))?;
        if usize::from(job.target_severity) >= SEVERITY_LEVELS {
            return Err(PlanError::InvalidSeverity(job.target_severity));
        }
        for d in Disease::ALL {
            let s = if d == job.disease {
                job.target_severity
            } else {
                source.severity(d)
            };
            counts[d.index()].0[usize::from(s)] += 1;
        }
    }
    Ok(counts)
}
