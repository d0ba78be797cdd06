//! Curriculum and shuffled batch planning.
//!
//! The curriculum phase sorts single-speaker utterances by length and
//! multi-speaker mixtures by how close the two speakers' levels are, then
//! alternates batch kinds until one side runs out. The shuffled phase
//! re-shuffles both pools each epoch and interleaves batch kinds at random,
//! weighted by how many batches of each kind remain. Single-speaker batches
//! are the ones a training loop would route around the mask/beamformer
//! stages, so a batch never mixes kinds.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceKind {
    CleanSingle,
    NoisyMulti,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub id: String,
    pub kind: UtteranceKind,
    pub length_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub shard: PathBuf,
}

impl UtteranceMeta {
    pub fn validate(&self) -> Result<()> {
        if self.length_frames == 0 {
            return Err(Error::InvalidInput(format!(
                "utterance {} has zero length",
                self.id
            )));
        }
        match (self.kind, self.snr_db) {
            (UtteranceKind::NoisyMulti, None) => Err(Error::InvalidInput(format!(
                "multi-speaker utterance {} is missing snr_db",
                self.id
            ))),
            (UtteranceKind::CleanSingle, Some(_)) => Err(Error::InvalidInput(format!(
                "single-speaker utterance {} must not carry snr_db",
                self.id
            ))),
            _ => Ok(()),
        }
    }
}

/// How to order the multi-speaker pool in the curriculum phase. Balanced
/// levels first (ascending |snr|) is the default; raw ascending SNR is kept
/// behind this switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrSortKey {
    #[default]
    AbsoluteSnr,
    RawSnr,
}

impl SnrSortKey {
    fn key(&self, snr_db: f64) -> f64 {
        match self {
            SnrSortKey::AbsoluteSnr => snr_db.abs(),
            SnrSortKey::RawSnr => snr_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Curriculum,
    Shuffled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Batch {
    pub kind: UtteranceKind,
    pub utterance_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchPlan {
    pub phase: Phase,
    pub batches: Vec<Batch>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn iter(&self) -> EpochIterator<'_> {
        EpochIterator {
            plan: self,
            cursor: 0,
        }
    }

    /// Resume an epoch from a saved cursor.
    pub fn iter_resume(&self, cursor: usize) -> Result<EpochIterator<'_>> {
        if cursor > self.batches.len() {
            return Err(Error::InvalidInput(format!(
                "cursor {cursor} beyond plan of {} batches",
                self.batches.len()
            )));
        }
        Ok(EpochIterator { plan: self, cursor })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialization cannot fail")
    }
}

pub struct EpochIterator<'a> {
    plan: &'a BatchPlan,
    cursor: usize,
}

impl<'a> EpochIterator<'a> {
    /// Position to save for a later `iter_resume`.
    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

impl<'a> Iterator for EpochIterator<'a> {
    type Item = &'a Batch;

    fn next(&mut self) -> Option<&'a Batch> {
        let b = self.plan.batches.get(self.cursor)?;
        self.cursor += 1;
        Some(b)
    }
}

fn validate_inputs(
    clean: &[UtteranceMeta],
    noisy: &[UtteranceMeta],
    batch_size: usize,
) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    if clean.is_empty() && noisy.is_empty() {
        return Err(Error::InvalidInput("no utterances to schedule".into()));
    }
    for u in clean {
        u.validate()?;
        if u.kind != UtteranceKind::CleanSingle {
            return Err(Error::InvalidInput(format!(
                "utterance {} in the clean pool is not single-speaker",
                u.id
            )));
        }
    }
    for u in noisy {
        u.validate()?;
        if u.kind != UtteranceKind::NoisyMulti {
            return Err(Error::InvalidInput(format!(
                "utterance {} in the noisy pool is not multi-speaker",
                u.id
            )));
        }
    }
    Ok(())
}

fn chunk(ids: Vec<String>, kind: UtteranceKind, batch_size: usize) -> Vec<Batch> {
    ids.chunks(batch_size)
        .map(|c| Batch {
            kind,
            utterance_ids: c.to_vec(),
        })
        .collect()
}

fn alternate(clean: Vec<Batch>, noisy: Vec<Batch>) -> Vec<Batch> {
    let mut out = Vec::with_capacity(clean.len() + noisy.len());
    let mut ci = clean.into_iter();
    let mut ni = noisy.into_iter();
    loop {
        match (ci.next(), ni.next()) {
            (Some(c), Some(n)) => {
                out.push(c);
                out.push(n);
            }
            (Some(c), None) => {
                out.push(c);
                out.extend(ci);
                break;
            }
            (None, Some(n)) => {
                out.push(n);
                out.extend(ni);
                break;
            }
            (None, None) => break,
        }
    }
    out
}

/// Phase-one plan: sorted pools, contiguous batches, alternating kinds
/// (clean first) until one side exhausts. The last partial batch is kept.
pub fn build_curriculum(
    clean: &[UtteranceMeta],
    noisy: &[UtteranceMeta],
    batch_size: usize,
    snr_sort: SnrSortKey,
) -> Result<BatchPlan> {
    validate_inputs(clean, noisy, batch_size)?;

    let mut clean_sorted: Vec<&UtteranceMeta> = clean.iter().collect();
    clean_sorted.sort_by_key(|u| u.length_frames);
    let mut noisy_sorted: Vec<&UtteranceMeta> = noisy.iter().collect();
    noisy_sorted.sort_by(|a, b| {
        let ka = snr_sort.key(a.snr_db.expect("validated"));
        let kb = snr_sort.key(b.snr_db.expect("validated"));
        ka.partial_cmp(&kb).expect("snr keys are finite")
    });

    let clean_batches = chunk(
        clean_sorted.iter().map(|u| u.id.clone()).collect(),
        UtteranceKind::CleanSingle,
        batch_size,
    );
    let noisy_batches = chunk(
        noisy_sorted.iter().map(|u| u.id.clone()).collect(),
        UtteranceKind::NoisyMulti,
        batch_size,
    );

    Ok(BatchPlan {
        phase: Phase::Curriculum,
        batches: alternate(clean_batches, noisy_batches),
    })
}

/// Phase-two plan: within-kind shuffle, then a random interleave of batch
/// kinds weighted by remaining counts. Deterministic given the seed.
pub fn build_shuffled(
    clean: &[UtteranceMeta],
    noisy: &[UtteranceMeta],
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan> {
    validate_inputs(clean, noisy, batch_size)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let shuffle_ids = |pool: &[UtteranceMeta], rng: &mut ChaCha12Rng| -> Vec<String> {
        let mut ids: Vec<String> = pool.iter().map(|u| u.id.clone()).collect();
        for i in (1..ids.len()).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
        ids
    };

    let clean_ids = shuffle_ids(clean, &mut rng);
    let noisy_ids = shuffle_ids(noisy, &mut rng);
    let mut clean_batches = chunk(clean_ids, UtteranceKind::CleanSingle, batch_size).into_iter();
    let mut noisy_batches = chunk(noisy_ids, UtteranceKind::NoisyMulti, batch_size).into_iter();

    let mut clean_left = clean_batches.len();
    let mut noisy_left = noisy_batches.len();
    let mut out = Vec::with_capacity(clean_left + noisy_left);
    while clean_left + noisy_left > 0 {
        let pick = rng.random_range(0..clean_left + noisy_left);
        if pick < clean_left {
            out.push(clean_batches.next().expect("counted"));
            clean_left -= 1;
        } else {
            out.push(noisy_batches.next().expect("counted"));
            noisy_left -= 1;
        }
    }

    Ok(BatchPlan {
        phase: Phase::Shuffled,
        batches: out,
    })
}

/// Check a plan against the scheduling invariants; returns human-readable
/// violations (empty when the plan is sound).
pub fn validate_plan(
    plan: &BatchPlan,
    clean: &[UtteranceMeta],
    noisy: &[UtteranceMeta],
    snr_sort: SnrSortKey,
) -> Vec<String> {
    use std::collections::HashMap;
    let mut violations = Vec::new();

    let mut expected: HashMap<&str, (&UtteranceMeta, usize)> = HashMap::new();
    for u in clean.iter().chain(noisy) {
        expected.insert(u.id.as_str(), (u, 0));
    }

    for (bi, batch) in plan.batches.iter().enumerate() {
        for id in &batch.utterance_ids {
            match expected.get_mut(id.as_str()) {
                None => violations.push(format!("batch {bi}: unknown utterance {id}")),
                Some((meta, count)) => {
                    *count += 1;
                    if meta.kind != batch.kind {
                        violations.push(format!(
                            "batch {bi}: mixes kinds ({} is {:?}, batch is {:?})",
                            id, meta.kind, batch.kind
                        ));
                    }
                }
            }
        }
    }
    for (id, (_, count)) in &expected {
        if *count != 1 {
            violations.push(format!("utterance {id} scheduled {count} times"));
        }
    }

    if plan.phase == Phase::Curriculum {
        // flattened per-kind order must be non-decreasing in the sort key
        let mut last_len = 0usize;
        let mut last_key = f64::NEG_INFINITY;
        for batch in &plan.batches {
            for id in &batch.utterance_ids {
                let Some((meta, _)) = expected.get(id.as_str()) else {
                    continue;
                };
                match batch.kind {
                    UtteranceKind::CleanSingle => {
                        if meta.length_frames < last_len {
                            violations.push(format!(
                                "clean order regresses at {id}: {} < {last_len}",
                                meta.length_frames
                            ));
                        }
                        last_len = meta.length_frames;
                    }
                    UtteranceKind::NoisyMulti => {
                        let key = snr_sort.key(meta.snr_db.unwrap_or(0.0));
                        if key < last_key {
                            violations
                                .push(format!("noisy order regresses at {id}: {key} < {last_key}"));
                        }
                        last_key = key;
                    }
                }
            }
        }

        // alternation until one kind exhausts
        for i in 0..plan.batches.len().saturating_sub(1) {
            if plan.batches[i].kind == plan.batches[i + 1].kind {
                let other_remains = plan.batches[i + 1..]
                    .iter()
                    .any(|b| b.kind != plan.batches[i].kind);
                if other_remains {
                    violations.push(format!(
                        "batches {i} and {} share kind {:?} while the other kind still has batches",
                        i + 1,
                        plan.batches[i].kind
                    ));
                }
            }
        }
    }

    violations
}
