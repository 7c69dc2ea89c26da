//! Seeded Monte Carlo campaigns: generation, labeling, persistence, splitting.
//!
//! A campaign sweeps a list of mean strengths at one (COV, δ_h, δ_v) setting.
//! Realization (i, k) always draws from the substream keyed by
//! `(seed, i, k)`, so the result is bit-identical for any worker count and
//! any execution order. The ln-field correlation structure depends only on
//! COV and the correlation distances, so one Cholesky factor is shared by all
//! mean levels; only μ_ln shifts per level.

use crate::error::{Error, Result};
use crate::randfield::{
    build_covariance, cholesky_factor, lognormal_moments, sample_realization, FieldStats,
};
use crate::rng::substream;
use crate::stability::{SearchPlan, SearchSpec, SlopeGeometry, SlopeModel, StabilityLabel};
use crate::Real;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;

/// Mean strengths of the standard five-level sweep (kPa).
pub const STANDARD_MU_VALUES: [Real; 5] = [18.6, 22.3, 26.0, 29.7, 33.5];

/// Everything needed to regenerate a campaign bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub mu_values: Vec<Real>,
    pub cov: Real,
    pub delta_h: Real,
    pub delta_v: Real,
    /// Realizations generated per mean level.
    pub n_per_mu: usize,
    pub seed: u64,
    pub geometry: SlopeGeometry,
    /// Center/radius step of the critical-circle search (m).
    pub search_step: Real,
}

impl CampaignSpec {
    /// Standard sweep at the given correlation setting: five mean levels,
    /// default geometry, 0.25 m search.
    pub fn standard(cov: Real, delta_h: Real, delta_v: Real, n_per_mu: usize, seed: u64) -> Self {
        CampaignSpec {
            mu_values: STANDARD_MU_VALUES.to_vec(),
            cov,
            delta_h,
            delta_v,
            n_per_mu,
            seed,
            geometry: SlopeGeometry::default(),
            search_step: 0.25,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mu_values.is_empty() {
            return Err(Error::config("campaign needs at least one mean level"));
        }
        if self.n_per_mu == 0 {
            return Err(Error::config("n_per_mu must be at least 1"));
        }
        for &mu in &self.mu_values {
            FieldStats::new(mu, self.cov, self.delta_h, self.delta_v)?;
        }
        Ok(())
    }
}

/// One labeled realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    /// Strength per cell (kPa), row-major grid order.
    pub values: Vec<Real>,
    /// Mean strength of the level this realization was drawn at.
    pub mu: Real,
    pub label: StabilityLabel,
}

/// A generated campaign: the spec that produced it plus all labeled records,
/// ordered by (mean level, realization index).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: CampaignSpec,
    pub n_cells: usize,
    pub records: Vec<LabeledRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<StabilityLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// New dataset holding clones of the records at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            spec: self.spec.clone(),
            n_cells: self.n_cells,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Generates and labels every realization of the spec. Deterministic in the
/// spec alone; the rayon worker count does not affect the result.
pub fn run_campaign(spec: &CampaignSpec) -> Result<Dataset> {
    spec.validate()?;
    let model = SlopeModel::new(spec.geometry)?;
    let plan = SearchPlan::build(
        &model,
        SearchSpec::with_step(&spec.geometry, spec.search_step),
    )?;

    let stats0 = FieldStats::new(spec.mu_values[0], spec.cov, spec.delta_h, spec.delta_v)?;
    let moments0 = lognormal_moments(stats0.mu_cu, stats0.cov)?;
    // sigma_ln depends only on COV: one factor serves every mean level
    let factor = cholesky_factor(&build_covariance(&model.grid, &moments0, &stats0))?;
    let per_mu_moments: Vec<_> = spec
        .mu_values
        .iter()
        .map(|&mu| lognormal_moments(mu, spec.cov))
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, u64)> = (0..spec.mu_values.len())
        .flat_map(|i| (0..spec.n_per_mu as u64).map(move |k| (i, k)))
        .collect();
    let records: Vec<LabeledRecord> = tasks
        .par_iter()
        .map(|&(i, k)| {
            let mut rng = substream(spec.seed, i as u64, k);
            let r = sample_realization(&factor, &per_mu_moments[i], k, &mut rng);
            let verdict = plan.classify(&r.values);
            LabeledRecord {
                values: r.values,
                mu: spec.mu_values[i],
                label: verdict.label,
            }
        })
        .collect();

    Ok(Dataset {
        spec: spec.clone(),
        n_cells: model.n_cells(),
        records,
    })
}

/// Fraction of failed outcomes among the labels.
pub fn probability_of_failure(labels: &[StabilityLabel]) -> Real {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.is_failed()).count() as Real / labels.len() as Real
}

/// Absolute difference between a reference and an estimated failure
/// probability.
pub fn pf_error(reference: Real, estimate: Real) -> Real {
    (estimate - reference).abs()
}

/// Requested size of the training side of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSize {
    /// Fraction of the dataset, in (0, 1). Rounded to the nearest count.
    Fraction(Real),
    /// Absolute record count.
    Count(usize),
}

/// Seeded train/test split specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub size: SplitSize,
    pub seed: u64,
}

impl SplitPlan {
    fn train_count(&self, n: usize) -> Result<usize> {
        let k = match self.size {
            SplitSize::Fraction(f) => {
                if !(0.0..1.0).contains(&f) || f <= 0.0 {
                    return Err(Error::config("split fraction must be in (0, 1)"));
                }
                (f * n as Real).round() as usize
            }
            SplitSize::Count(c) => c,
        };
        if k == 0 || k >= n {
            return Err(Error::config(format!(
                "split leaves an empty side: {k} of {n} records for training"
            )));
        }
        Ok(k)
    }
}

/// Index split into (train, test): a seeded shuffle of 0..n, first
/// `train_count` indices train, the rest test. Each side is then sorted so the
/// record order within a side is the campaign order.
pub fn split_indices(n: usize, plan: &SplitPlan) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = plan.train_count(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(plan.seed, 0x5311, 0));
    let mut train = order[..k].to_vec();
    let mut test = order[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Materialized train/test datasets.
pub fn split_train_test(data: &Dataset, plan: &SplitPlan) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.len(), plan)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Index split stratified by (mean level, label): each stratum contributes
/// train slots in proportion to its size, apportioned by largest remainder,
/// so the training side reproduces the campaign's failure rate per level up
/// to rounding. Both sides come back in campaign order.
pub fn stratified_split_indices(
    data: &Dataset,
    plan: &SplitPlan,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = data.len();
    let k = plan.train_count(n)?;
    // strata keyed by (mu bits, label byte), in first-appearance order
    let mut keys: Vec<(u64, u8)> = Vec::new();
    let mut strata: Vec<Vec<usize>> = Vec::new();
    for (i, r) in data.records.iter().enumerate() {
        let key = (r.mu.to_bits(), r.label.as_byte());
        match keys.iter().position(|&q| q == key) {
            Some(s) => strata[s].push(i),
            None => {
                keys.push(key);
                strata.push(vec![i]);
            }
        }
    }
    // largest-remainder apportionment of the k train slots
    let quota: Vec<Real> = strata
        .iter()
        .map(|s| k as Real * s.len() as Real / n as Real)
        .collect();
    let mut take: Vec<usize> = quota.iter().map(|&q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quota[a] - quota[a].floor(), quota[b] - quota[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = k - take.iter().sum::<usize>();
    for &s in &order {
        if left == 0 {
            break;
        }
        if take[s] < strata[s].len() {
            take[s] += 1;
            left -= 1;
        }
    }
    if left > 0 {
        return Err(Error::config(
            "stratified split cannot place all train slots",
        ));
    }
    let mut train = Vec::with_capacity(k);
    let mut test = Vec::with_capacity(n - k);
    for (s, members) in strata.iter().enumerate() {
        let mut pool = members.clone();
        pool.shuffle(&mut substream(plan.seed, 0x57A7, s as u64));
        train.extend_from_slice(&pool[..take[s]]);
        test.extend_from_slice(&pool[take[s]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

const RFMC_MAGIC: &[u8; 4] = b"RFMC";
const RFMC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RfmcHeader {
    spec: CampaignSpec,
    n_cells: u64,
    n_records: u64,
}

/// Writes a dataset in the RFMC binary container: magic, version, a
/// length-prefixed JSON header, then fixed-size records of little-endian
/// cell strengths, the mean level, and a label byte.
pub fn write_rfmc(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(RFMC_MAGIC)?;
    w.write_all(&RFMC_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&RfmcHeader {
        spec: data.spec.clone(),
        n_cells: data.n_cells as u64,
        n_records: data.records.len() as u64,
    })?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for r in &data.records {
        if r.values.len() != data.n_cells {
            return Err(Error::data(format!(
                "record has {} values, campaign grid has {}",
                r.values.len(),
                data.n_cells
            )));
        }
        for &v in &r.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&r.mu.to_le_bytes())?;
        w.write_all(&[r.label.as_byte()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an RFMC container back into a dataset, validating magic, version,
/// and exact length.
pub fn read_rfmc(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RFMC_MAGIC {
        return Err(Error::data("not an RFMC file: bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != RFMC_VERSION {
        return Err(Error::data(format!(
            "unsupported RFMC version {version}, expected {RFMC_VERSION}"
        )));
    }
    r.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut header)?;
    let header: RfmcHeader = serde_json::from_slice(&header)?;
    let n_cells = header.n_cells as usize;

    let mut records = Vec::with_capacity(header.n_records as usize);
    let mut buf = vec![0u8; n_cells * 8 + 8 + 1];
    for _ in 0..header.n_records {
        r.read_exact(&mut buf)
            .map_err(|_| Error::data("RFMC file truncated mid-record"))?;
        let values: Vec<Real> = buf[..n_cells * 8]
            .chunks_exact(8)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mu = Real::from_le_bytes(buf[n_cells * 8..n_cells * 8 + 8].try_into().unwrap());
        let label = StabilityLabel::from_byte(buf[n_cells * 8 + 8])?;
        records.push(LabeledRecord { values, mu, label });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::data("trailing bytes after last RFMC record"));
    }
    Ok(Dataset {
        spec: header.spec,
        n_cells,
        records,
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Writes the dataset as CSV: one column per cell, then `mu`, then `label`
/// (0 stable, 1 failed).
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..data.n_cells {
        write!(w, "c{i},")?;
    }
    writeln!(w, "mu,label")?;
    for r in &data.records {
        for &v in &r.values {
            write!(w, "{v},")?;
        }
        writeln!(w, "{},{}", r.mu, r.label.as_byte())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CampaignSpec {
        CampaignSpec {
            mu_values: vec![18.6, 33.5],
            cov: 0.5,
            delta_h: 6.0,
            delta_v: 1.0,
            n_per_mu: 30,
            seed: 7,
            geometry: SlopeGeometry {
                cell_size: 1.0,
                ..SlopeGeometry::default()
            },
            search_step: 1.0,
        }
    }

    #[test]
    fn campaign_is_deterministic() {
        let spec = small_spec();
        let a = run_campaign(&spec).unwrap();
        let b = run_campaign(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
        assert_eq!(a.n_cells, 200);
    }

    #[test]
    fn campaign_is_worker_count_independent() {
        let spec = small_spec();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_campaign(&spec))
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_campaign(&spec))
            .unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn pf_decreases_with_mean_strength() {
        let data = run_campaign(&small_spec()).unwrap();
        let pf_at = |mu: Real| {
            let labels: Vec<_> = data
                .records
                .iter()
                .filter(|r| r.mu == mu)
                .map(|r| r.label)
                .collect();
            probability_of_failure(&labels)
        };
        let (weak, strong) = (pf_at(18.6), pf_at(33.5));
        assert!(weak > strong, "pf {weak} at 18.6 vs {strong} at 33.5");
        assert!(weak > 0.0);
    }

    #[test]
    fn pf_hand_counts() {
        use StabilityLabel::*;
        assert_eq!(probability_of_failure(&[]), 0.0);
        assert_eq!(probability_of_failure(&[Stable, Stable]), 0.0);
        assert_eq!(
            probability_of_failure(&[Failed, Stable, Failed, Stable]),
            0.5
        );
        approx::assert_relative_eq!(pf_error(0.2, 0.35), 0.15, max_relative = 1e-12);
        approx::assert_relative_eq!(pf_error(0.35, 0.2), 0.15, max_relative = 1e-12);
    }

    #[test]
    fn split_partitions_and_is_seeded() {
        let (train, test) = split_indices(
            100,
            &SplitPlan {
                size: SplitSize::Fraction(0.05),
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 95);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());

        let again = split_indices(
            100,
            &SplitPlan {
                size: SplitSize::Fraction(0.05),
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!((train.clone(), test), again);
        let other = split_indices(
            100,
            &SplitPlan {
                size: SplitSize::Count(5),
                seed: 4,
            },
        )
        .unwrap();
        assert_ne!(train, other.0);
    }

    #[test]
    fn degenerate_splits_are_rejected() {
        let plan = |size| SplitPlan { size, seed: 0 };
        assert!(split_indices(10, &plan(SplitSize::Count(0))).is_err());
        assert!(split_indices(10, &plan(SplitSize::Count(10))).is_err());
        assert!(split_indices(10, &plan(SplitSize::Fraction(0.0))).is_err());
        assert!(split_indices(10, &plan(SplitSize::Fraction(1.0))).is_err());
        assert!(split_indices(10, &plan(SplitSize::Fraction(0.01))).is_err()); // rounds to 0
    }

    #[test]
    fn rfmc_roundtrip_and_digest() {
        let mut spec = small_spec();
        spec.n_per_mu = 4;
        let data = run_campaign(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("campaign.rfmc");
        write_rfmc(&path, &data).unwrap();
        let back = read_rfmc(&path).unwrap();
        assert_eq!(data, back);

        let d1 = file_digest(&path).unwrap();
        assert_eq!(d1.len(), 64);
        write_rfmc(&path, &data).unwrap();
        assert_eq!(d1, file_digest(&path).unwrap()); // byte-stable writer
    }

    #[test]
    fn rfmc_rejects_corruption() {
        let mut spec = small_spec();
        spec.n_per_mu = 2;
        let data = run_campaign(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("campaign.rfmc");
        write_rfmc(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_rfmc(&path), Err(Error::Data(_))));

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 5);
        std::fs::write(&path, &truncated).unwrap();
        assert!(matches!(read_rfmc(&path), Err(Error::Data(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        std::fs::write(&path, &trailing).unwrap();
        assert!(matches!(read_rfmc(&path), Err(Error::Data(_))));
    }

    #[test]
    fn csv_shape() {
        let mut spec = small_spec();
        spec.n_per_mu = 3;
        let data = run_campaign(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("campaign.csv");
        write_csv(&path, &data).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + data.len());
        assert_eq!(lines[0].split(',').count(), data.n_cells + 2);
        assert!(lines[0].ends_with("mu,label"));
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first.len(), data.n_cells + 2);
        assert_eq!(first[data.n_cells], "18.6");
        let parsed: Real = first[0].parse().unwrap();
        assert_eq!(parsed, data.records[0].values[0]);
    }

    #[test]
    fn stratified_split_matches_per_level_rates() {
        let mut spec = small_spec();
        spec.n_per_mu = 40;
        let data = run_campaign(&spec).unwrap();
        let plan = SplitPlan {
            size: SplitSize::Fraction(0.2),
            seed: 11,
        };
        let (train, test) = stratified_split_indices(&data, &plan).unwrap();
        assert_eq!(train.len(), 16);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..data.len()).collect::<Vec<_>>());
        assert!(train.windows(2).all(|w| w[0] < w[1]));

        // train failure rate within one largest-remainder slot of the
        // campaign rate, overall and per mean level
        let pf_all = probability_of_failure(&data.labels());
        let train_labels: Vec<_> = train.iter().map(|&i| data.records[i].label).collect();
        // each failed stratum is within one slot of its quota
        assert!((probability_of_failure(&train_labels) - pf_all).abs() <= 2.0 / 16.0 + 1e-12);
        for &mu in &data.spec.mu_values {
            let level: Vec<_> = data
                .records
                .iter()
                .filter(|r| r.mu == mu)
                .map(|r| r.label)
                .collect();
            let level_train: Vec<_> = train
                .iter()
                .map(|&i| &data.records[i])
                .filter(|r| r.mu == mu)
                .map(|r| r.label)
                .collect();
            assert!(!level_train.is_empty());
            assert!(
                (probability_of_failure(&level_train) - probability_of_failure(&level)).abs()
                    <= 1.0 / level_train.len() as Real + 1e-12
            );
        }

        // deterministic in the plan
        let (again, _) = stratified_split_indices(&data, &plan).unwrap();
        assert_eq!(again, train);
    }
}
