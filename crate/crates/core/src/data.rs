//! Dataset plumbing: synthetic generation with planted ground-truth
//! contacts, check-in CSV ingestion, patient/user splitting, and a
//! line-delimited on-disk format with a provenance header.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{is_contact_exact, ContactParams, TimestampedLocation, Trajectory};
use crate::rng::RngStream;

/// Benchmark region bounds shared by the bundled datasets.
pub const DEFAULT_REGION: (f64, f64) = (10_549.0, 8_499.0);

/// Timestamps are drawn from a 14-day window (the incubation framing).
pub const TIME_WINDOW_SECS: i64 = 14 * 86_400;

const FORMAT_VERSION: u32 = 1;

/// Synthetic generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_patients: usize,
    pub visits_min: usize,
    pub visits_max: usize,
    pub x_max: f64,
    pub y_max: f64,
    /// Fraction of users given one guaranteed contact visit.
    pub contact_plant_rate: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_users: 200,
            n_patients: 2, // ~1% of the default user count
            visits_min: 2,
            visits_max: 8,
            x_max: DEFAULT_REGION.0,
            y_max: DEFAULT_REGION.1,
            contact_plant_rate: 0.05,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::invalid("n_users must be at least 1"));
        }
        if self.n_patients == 0 {
            return Err(Error::invalid("n_patients must be at least 1"));
        }
        if self.visits_min == 0 || self.visits_min > self.visits_max {
            return Err(Error::invalid("visit range must satisfy 1 <= min <= max"));
        }
        if !(self.x_max > 0.0 && self.y_max > 0.0) {
            return Err(Error::invalid("region bounds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.contact_plant_rate) {
            return Err(Error::invalid("contact_plant_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic(GenConfig),
    CheckinFile {
        path: String,
        patient_ratio: f64,
        split_seed: u64,
    },
}

/// A benchmark dataset: the test population, the union of patient visits,
/// and the oracle labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub users: Vec<(u64, Trajectory)>,
    pub patients_union: Trajectory,
    pub ground_truth: Vec<bool>,
    pub region: (f64, f64),
    pub gen_config: Provenance,
    pub params: ContactParams,
}

impl Dataset {
    /// Sum of user trajectory lengths, the op-count normalizer.
    pub fn total_visits(&self) -> u64 {
        self.users.iter().map(|(_, t)| t.len() as u64).sum()
    }

    pub fn positives(&self) -> usize {
        self.ground_truth.iter().filter(|&&b| b).count()
    }
}

fn fisher_yates<T>(items: &mut [T], rng: &mut RngStream) {
    for i in (1..items.len()).rev() {
        let j = rng.int_in(0, i as u64) as usize;
        items.swap(i, j);
    }
}

fn compute_ground_truth(
    users: &[(u64, Trajectory)],
    patients: &Trajectory,
    params: &ContactParams,
) -> Vec<bool> {
    users
        .iter()
        .map(|(_, t)| is_contact_exact(t, patients, params))
        .collect()
}

/// Generate a synthetic dataset. Patient and user visits are uniform over
/// the region with timestamps uniform over a 14-day window. A
/// `contact_plant_rate` fraction of users (rounded) receive one visit within
/// `r/2` of a random patient visit and within `delta/2` after it, so those
/// users are oracle-positive by construction; incidental positives are kept.
pub fn gen_synthetic(cfg: &GenConfig, params: &ContactParams) -> Result<Dataset> {
    cfg.validate()?;
    params.validate()?;
    let root = RngStream::from_seed(cfg.seed);
    let mut patient_rng = root.split(0);
    let mut user_rng = root.split(1);
    let mut plant_rng = root.split(2);

    let uniform_visits = |rng: &mut RngStream, n: usize| -> Vec<TimestampedLocation> {
        (0..n)
            .map(|_| {
                TimestampedLocation::new(
                    rng.uniform_in(0.0, cfg.x_max),
                    rng.uniform_in(0.0, cfg.y_max),
                    rng.int_in(0, (TIME_WINDOW_SECS - 1) as u64) as i64,
                )
            })
            .collect()
    };

    let mut patient_visits = Vec::new();
    for _ in 0..cfg.n_patients {
        let k = patient_rng.int_in(cfg.visits_min as u64, cfg.visits_max as u64) as usize;
        patient_visits.extend(uniform_visits(&mut patient_rng, k));
    }
    let patients_union = Trajectory::new(patient_visits);

    let mut users = Vec::with_capacity(cfg.n_users);
    for id in 0..cfg.n_users as u64 {
        let k = user_rng.int_in(cfg.visits_min as u64, cfg.visits_max as u64) as usize;
        users.push((id, Trajectory::new(uniform_visits(&mut user_rng, k))));
    }

    let n_planted = (cfg.contact_plant_rate * cfg.n_users as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_users).collect();
    fisher_yates(&mut order, &mut plant_rng);
    for &u in order.iter().take(n_planted) {
        let traj = &mut users[u].1;
        let slot = plant_rng.int_in(0, (traj.len() - 1) as u64) as usize;
        let pv = patients_union.visits
            [plant_rng.int_in(0, (patients_union.len() - 1) as u64) as usize];
        let angle = plant_rng.uniform_in(0.0, std::f64::consts::TAU);
        let radius = params.r / 2.0 * plant_rng.uniform().sqrt();
        // clamping moves the point toward the in-region patient, so the
        // planted distance bound survives
        let x = (pv.loc.x + radius * angle.cos()).clamp(0.0, cfg.x_max);
        let y = (pv.loc.y + radius * angle.sin()).clamp(0.0, cfg.y_max);
        let t = pv.t + plant_rng.int_in(0, (params.delta / 2) as u64) as i64;
        traj.visits[slot] = TimestampedLocation::new(x, y, t);
    }

    let ground_truth = compute_ground_truth(&users, &patients_union, params);
    Ok(Dataset {
        users,
        patients_union,
        ground_truth,
        region: (cfg.x_max, cfg.y_max),
        gen_config: Provenance::Synthetic(*cfg),
        params: *params,
    })
}

/// How raw check-in coordinates map into the benchmark plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordTransform {
    /// Coordinates are already planar.
    Identity,
    /// A local-Cartesian affine map: `x' = (x - origin_x) * scale_x`,
    /// `y' = (y - origin_y) * scale_y`. A stand-in for a proper projection;
    /// origin and scale are explicit configuration.
    Affine {
        origin_x: f64,
        origin_y: f64,
        scale_x: f64,
        scale_y: f64,
    },
}

impl CoordTransform {
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        match self {
            CoordTransform::Identity => (x, y),
            CoordTransform::Affine {
                origin_x,
                origin_y,
                scale_x,
                scale_y,
            } => ((x - origin_x) * scale_x, (y - origin_y) * scale_y),
        }
    }
}

/// Keep only rows inside `[0, x_max] x [0, y_max]` (after the transform).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFilter {
    pub x_max: f64,
    pub y_max: f64,
}

/// Options for [`load_checkins`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckinOptions {
    pub transform: CoordTransform,
    pub region_filter: Option<RegionFilter>,
    pub patient_ratio: f64,
    pub split_seed: u64,
}

impl Default for CheckinOptions {
    fn default() -> Self {
        CheckinOptions {
            transform: CoordTransform::Identity,
            region_filter: None,
            patient_ratio: 0.01,
            split_seed: 0,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.and_utc().timestamp());
    }
    s.parse::<i64>().ok()
}

/// Load a check-in CSV (`user_id, timestamp, x, y`; ISO-8601 timestamps, an
/// optional header row) and split off a patient subset.
///
/// `ceil(patient_ratio * n_users)` users are sampled as patients; their
/// visits are unioned into the patient trajectory and they leave the test
/// population. Ground truth comes from the plaintext oracle.
pub fn load_checkins(
    path: &Path,
    opts: &CheckinOptions,
    params: &ContactParams,
) -> Result<Dataset> {
    params.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;

    let mut by_user: BTreeMap<u64, Vec<TimestampedLocation>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if line == 1 && record.get(0) == Some("user_id") {
            continue; // header row
        }
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 4 columns, found {}", record.len()),
            });
        }
        let field = |idx: usize| record.get(idx).unwrap();
        let user_id: u64 = field(0).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad user id '{}'", field(0)),
        })?;
        let t = parse_timestamp(field(1)).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad timestamp '{}'", field(1)),
        })?;
        if t < 0 {
            return Err(Error::Parse {
                line,
                msg: "timestamps must not precede the epoch".into(),
            });
        }
        let x: f64 = field(2).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad x coordinate '{}'", field(2)),
        })?;
        let y: f64 = field(3).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad y coordinate '{}'", field(3)),
        })?;
        let (x, y) = opts.transform.apply(x, y);
        if let Some(f) = &opts.region_filter {
            if !(0.0..=f.x_max).contains(&x) || !(0.0..=f.y_max).contains(&y) {
                continue;
            }
        }
        by_user
            .entry(user_id)
            .or_default()
            .push(TimestampedLocation::new(x, y, t));
    }
    if by_user.is_empty() {
        return Err(Error::invalid("check-in file contains no usable rows"));
    }
    for visits in by_user.values_mut() {
        visits.sort_by_key(|v| v.t);
    }

    let n = by_user.len();
    let n_patients = (opts.patient_ratio * n as f64).ceil() as usize;
    if n_patients == 0 {
        return Err(Error::invalid(
            "patient_ratio too small: no patients would be sampled",
        ));
    }
    if n_patients >= n {
        return Err(Error::invalid(
            "patient_ratio too large: no users would remain",
        ));
    }
    let mut ids: Vec<u64> = by_user.keys().copied().collect();
    let mut split_rng = RngStream::from_seed(opts.split_seed);
    fisher_yates(&mut ids, &mut split_rng);
    let mut patient_ids: Vec<u64> = ids[..n_patients].to_vec();
    patient_ids.sort_unstable();

    let mut patient_visits = Vec::new();
    for id in &patient_ids {
        patient_visits.extend(by_user[id].iter().copied());
    }
    let patients_union = Trajectory::new(patient_visits);

    let users: Vec<(u64, Trajectory)> = by_user
        .iter()
        .filter(|(id, _)| patient_ids.binary_search(id).is_err())
        .map(|(id, visits)| (*id, Trajectory::new(visits.clone())))
        .collect();

    let region = users
        .iter()
        .flat_map(|(_, t)| &t.visits)
        .chain(&patients_union.visits)
        .fold((0.0f64, 0.0f64), |acc, v| {
            (acc.0.max(v.loc.x), acc.1.max(v.loc.y))
        });

    let ground_truth = compute_ground_truth(&users, &patients_union, params);
    Ok(Dataset {
        users,
        patients_union,
        ground_truth,
        region,
        gen_config: Provenance::CheckinFile {
            path: path.display().to_string(),
            patient_ratio: opts.patient_ratio,
            split_seed: opts.split_seed,
        },
        params: *params,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Record {
    Header {
        format_version: u32,
        gen_config: Provenance,
        params: ContactParams,
        region: (f64, f64),
    },
    Patients {
        visits: Vec<(f64, f64, i64)>,
    },
    User {
        id: u64,
        visits: Vec<(f64, f64, i64)>,
    },
    Truth {
        values: Vec<bool>,
    },
}

fn pack_visits(t: &Trajectory) -> Vec<(f64, f64, i64)> {
    t.visits.iter().map(|v| (v.loc.x, v.loc.y, v.t)).collect()
}

fn unpack_visits(v: Vec<(f64, f64, i64)>) -> Trajectory {
    Trajectory::new(
        v.into_iter()
            .map(|(x, y, t)| TimestampedLocation::new(x, y, t))
            .collect(),
    )
}

/// Write a dataset as line-delimited JSON records behind a provenance header.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let write = |out: &mut dyn Write, r: &Record| -> Result<()> {
        serde_json::to_writer(&mut *out, r).map_err(|e| Error::invalid(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(())
    };
    write(
        &mut out,
        &Record::Header {
            format_version: FORMAT_VERSION,
            gen_config: dataset.gen_config.clone(),
            params: dataset.params,
            region: dataset.region,
        },
    )?;
    write(
        &mut out,
        &Record::Patients {
            visits: pack_visits(&dataset.patients_union),
        },
    )?;
    for (id, t) in &dataset.users {
        write(
            &mut out,
            &Record::User {
                id: *id,
                visits: pack_visits(t),
            },
        )?;
    }
    write(
        &mut out,
        &Record::Truth {
            values: dataset.ground_truth.clone(),
        },
    )?;
    out.flush()?;
    Ok(())
}

/// Load a saved dataset. Ground truth is recomputed from the stored
/// parameters and asserted against the stored labels.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut header: Option<(Provenance, ContactParams, (f64, f64))> = None;
    let mut patients: Option<Trajectory> = None;
    let mut users: Vec<(u64, Trajectory)> = Vec::new();
    let mut truth: Option<Vec<bool>> = None;
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match record {
            Record::Header {
                format_version,
                gen_config,
                params,
                region,
            } => {
                if format_version != FORMAT_VERSION {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unsupported format version {format_version}"),
                    });
                }
                header = Some((gen_config, params, region));
            }
            Record::Patients { visits } => patients = Some(unpack_visits(visits)),
            Record::User { id, visits } => users.push((id, unpack_visits(visits))),
            Record::Truth { values } => truth = Some(values),
        }
    }
    let (gen_config, params, region) =
        header.ok_or_else(|| Error::invalid("dataset file is missing its header"))?;
    let patients_union =
        patients.ok_or_else(|| Error::invalid("dataset file is missing patient visits"))?;
    let stored_truth = truth.ok_or_else(|| Error::invalid("dataset file is missing labels"))?;
    let ground_truth = compute_ground_truth(&users, &patients_union, &params);
    if ground_truth != stored_truth {
        return Err(Error::invalid(
            "stored labels disagree with the oracle; file is corrupt or parameters drifted",
        ));
    }
    Ok(Dataset {
        users,
        patients_union,
        ground_truth,
        region,
        gen_config,
        params,
    })
}
