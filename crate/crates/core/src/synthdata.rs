//! Labeled synthetic sequences: deformable blobs that oscillate, jitter or
//! stay put depending on the class.
//!
//! Classes 0 and 1 share a template and have zero expected displacement:
//! class 0 oscillates with a per-sequence random sign, class 1 only jitters
//! with the same marginal position variance. Classes 2 and 3 use a second
//! template and oscillate with opposite fixed signs, so their mean motion
//! differs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{DimpError, Result};
use crate::geom::{read_dpc1, write_dpc1, DynamicPointCloud, Point};
use crate::motion::{motion_rms, read_mot1, write_mot1, MotionField};
use crate::rng;

pub const MANIFEST_VERSION: u32 = 1;

/// Sign of the oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Phase {
    /// `+1` or `-1` with equal probability, drawn per sequence.
    Random,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMotion {
    pub name: String,
    pub template: usize,
    pub phase: Phase,
    pub amplitude: f64,
    /// Cycles per frame.
    pub frequency: f64,
    /// Per-axis standard deviation of i.i.d. positional jitter.
    pub noise_std: f64,
    /// Unit direction of the oscillation.
    pub direction: [f64; 3],
}

/// Union of ellipsoids that points are sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub seq_len: usize,
    pub num_points: usize,
    pub classes: Vec<ClassMotion>,
    pub templates: Vec<Template>,
    /// Spatial wavenumber of the oscillation phase along `direction`.
    pub wave_number: f64,
    /// Axis-aligned bounding box `[lo, hi]` every coordinate is clamped to.
    pub bounds: [f64; 2],
}

impl Default for GeneratorParams {
    fn default() -> Self {
        let a = 0.05;
        let f = 0.1;
        let dir = normalize([1.0, 0.5, 0.25]);
        let osc = |name: &str, template, phase| ClassMotion {
            name: name.into(),
            template,
            phase,
            amplitude: a,
            frequency: f,
            noise_std: 0.0,
            direction: dir,
        };
        Self {
            seq_len: 8,
            num_points: 256,
            classes: vec![
                osc("oscillate_random_sign", 0, Phase::Random),
                ClassMotion {
                    name: "jitter".into(),
                    template: 0,
                    phase: Phase::Fixed(1.0),
                    amplitude: 0.0,
                    frequency: f,
                    // isotropic jitter with the oscillation's position variance a^2 / 2
                    noise_std: a / 6f64.sqrt(),
                    direction: dir,
                },
                osc("oscillate_positive", 1, Phase::Fixed(1.0)),
                osc("oscillate_negative", 1, Phase::Fixed(-1.0)),
            ],
            templates: vec![
                Template {
                    centers: vec![[0.42, 0.45, 0.5], [0.6, 0.55, 0.48], [0.5, 0.62, 0.58]],
                    radii: vec![[0.16, 0.1, 0.1], [0.1, 0.14, 0.1], [0.09, 0.09, 0.12]],
                },
                Template {
                    centers: vec![[0.5, 0.4, 0.45], [0.5, 0.6, 0.55], [0.38, 0.5, 0.62]],
                    radii: vec![[0.1, 0.16, 0.1], [0.14, 0.1, 0.09], [0.1, 0.1, 0.1]],
                },
            ],
            wave_number: PI,
            bounds: [0.0, 1.0],
        }
    }
}

impl GeneratorParams {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| DimpError::Config {
            field: field.into(),
            message: message.into(),
        };
        if self.seq_len < 2 {
            return Err(bad("seq_len", "needs at least 2 frames"));
        }
        if self.num_points == 0 {
            return Err(bad("num_points", "must be positive"));
        }
        if self.classes.len() < 2 {
            return Err(bad("classes", "needs at least 2 classes"));
        }
        for c in &self.classes {
            if c.template >= self.templates.len() {
                return Err(bad("classes.template", "refers to a missing template"));
            }
            if !(c.amplitude >= 0.0 && c.noise_std >= 0.0 && c.frequency.is_finite()) {
                return Err(bad("classes", "amplitude and noise_std must be nonnegative"));
            }
            if let Phase::Fixed(p) = c.phase {
                if !p.is_finite() {
                    return Err(bad("classes.phase", "must be finite"));
                }
            }
        }
        for t in &self.templates {
            if t.centers.is_empty() || t.centers.len() != t.radii.len() {
                return Err(bad("templates", "needs matching, nonempty centers and radii"));
            }
            if t.radii.iter().flatten().any(|&r| !(r > 0.0)) {
                return Err(bad("templates.radii", "must be positive"));
            }
        }
        if !(self.bounds[0] < self.bounds[1]) {
            return Err(bad("bounds", "lower bound must be below upper bound"));
        }
        Ok(())
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Uniform points inside a union of ellipsoids, by rejection from each
/// ellipsoid's box with volume-proportional ellipsoid choice.
fn sample_template(t: &Template, n: usize, r: &mut rng::Rng) -> Vec<Point> {
    let vols: Vec<f64> = t.radii.iter().map(|a| a[0] * a[1] * a[2]).collect();
    let total: f64 = vols.iter().sum();
    let inside = |p: &Point, k: usize| {
        let (c, a) = (t.centers[k], t.radii[k]);
        (0..3).map(|i| ((p[i] - c[i]) / a[i]).powi(2)).sum::<f64>() <= 1.0
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut u = r.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < vols.len() && u >= vols[k] {
            u -= vols[k];
            k += 1;
        }
        let (c, a) = (t.centers[k], t.radii[k]);
        let p = [
            c[0] + a[0] * r.random_range(-1.0..1.0),
            c[1] + a[1] * r.random_range(-1.0..1.0),
            c[2] + a[2] * r.random_range(-1.0..1.0),
        ];
        if !inside(&p, k) {
            continue;
        }
        // accept each point of an overlap region once
        let covering = (0..vols.len()).filter(|&j| inside(&p, j)).count();
        if covering > 1 && r.random::<f64>() * covering as f64 >= 1.0 {
            continue;
        }
        out.push(p);
    }
    out
}

/// One generated sequence.
#[derive(Debug, Clone)]
pub struct Generated {
    pub sequence: DynamicPointCloud,
    pub motion: MotionField,
    pub label: usize,
    /// The per-sequence sign actually used.
    pub phase: f64,
}

/// Deterministic sequence of class `class_id` drawn from `seed`.
pub fn gen_sequence(class_id: usize, params: &GeneratorParams, seed: u64) -> Result<Generated> {
    params.validate()?;
    let class = params.classes.get(class_id).ok_or_else(|| {
        DimpError::invalid(format!("class {class_id} out of range for {} classes", params.num_classes()))
    })?;
    let mut r = rng::seeded(seed);
    let base = sample_template(&params.templates[class.template], params.num_points, &mut r);
    let phase = match class.phase {
        Phase::Random => {
            if r.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        Phase::Fixed(p) => p,
    };
    let d = class.direction;
    let centroid = {
        let mut c = [0.0; 3];
        for p in &base {
            for k in 0..3 {
                c[k] += p[k] / base.len() as f64;
            }
        }
        c
    };
    let psi: Vec<f64> = base
        .iter()
        .map(|p| params.wave_number * (0..3).map(|k| (p[k] - centroid[k]) * d[k]).sum::<f64>())
        .collect();
    let jitter = Normal::new(0.0, class.noise_std.max(0.0)).map_err(|e| DimpError::invalid(e.to_string()))?;
    let [lo, hi] = params.bounds;
    let frames: Vec<Vec<Point>> = (0..params.seq_len)
        .map(|t| {
            base.iter()
                .zip(&psi)
                .map(|(p, &ps)| {
                    let s = phase * class.amplitude * (2.0 * PI * class.frequency * t as f64 + ps).sin();
                    let mut q = [0.0; 3];
                    for k in 0..3 {
                        let noise = if class.noise_std > 0.0 { jitter.sample(&mut r) } else { 0.0 };
                        q[k] = round_f32((p[k] + s * d[k] + noise).clamp(lo, hi));
                    }
                    q
                })
                .collect()
        })
        .collect();
    let sequence = DynamicPointCloud::new(frames)?;
    let motion = MotionField::identity(&sequence)?;
    Ok(Generated {
        sequence,
        motion,
        label: class_id,
        phase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub path: String,
    pub motion_path: String,
    pub label: usize,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub items: Vec<ManifestItem>,
}

#[derive(Debug, Clone, Serialize)]
struct Sidecar<'a> {
    class_label: usize,
    seed: u64,
    motion_path: &'a str,
    generator_params: &'a GeneratorParams,
}

/// Number of training items: everything except `floor(count * test)`.
pub fn train_count(count: usize, test_fraction: f64) -> usize {
    count - ((count as f64 * test_fraction + 1e-9).floor() as usize).min(count)
}

/// Write `count` sequences with motion files, sidecars and a manifest to
/// `out_dir`. Labels cycle through the classes; the split is a seeded
/// shuffle with `floor(count * test)` test items.
pub fn gen_dataset(
    params: &GeneratorParams,
    count: usize,
    split_fractions: (f64, f64),
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    params.validate()?;
    let (train, test) = split_fractions;
    if !(train >= 0.0 && test >= 0.0) || ((train + test) - 1.0).abs() > 1e-9 {
        return Err(DimpError::Config {
            field: "split_fractions".into(),
            message: format!("fractions {train} and {test} must be nonnegative and sum to 1"),
        });
    }
    if count == 0 {
        return Err(DimpError::Config {
            field: "count".into(),
            message: "must be positive".into(),
        });
    }
    fs::create_dir_all(out_dir).map_err(|e| DimpError::io(out_dir, e))?;

    let c = params.num_classes();
    let n_train = train_count(count, test);
    let mut order: Vec<usize> = (0..count).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::seeded(rng::derive(seed, &[u64::MAX])));
    let mut split = vec![Split::Test; count];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }

    let mut generated = Vec::with_capacity(count);
    for i in 0..count {
        let s = rng::derive(seed, &[i as u64]);
        generated.push((s, gen_sequence(i % c, params, s)?));
    }
    let rms = motion_rms(generated.iter().map(|(_, g)| &g.motion.displacements));

    let mut items = Vec::with_capacity(count);
    for (i, (s, g)) in generated.iter().enumerate() {
        let stem = format!("seq_{i:05}");
        let (path, motion_path) = (format!("{stem}.dpc1"), format!("{stem}.mot1"));
        write_dpc1(&g.sequence, &out_dir.join(&path))?;
        write_mot1(&g.motion.displacements, rms, &out_dir.join(&motion_path))?;
        let sidecar = Sidecar {
            class_label: g.label,
            seed: *s,
            motion_path: &motion_path,
            generator_params: params,
        };
        let side_path = out_dir.join(format!("{stem}.json"));
        fs::write(&side_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| DimpError::io(&side_path, e))?;
        items.push(ManifestItem {
            path,
            motion_path,
            label: g.label,
            split: split[i],
            seed: *s,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        classes: params.classes.iter().map(|c| c.name.clone()).collect(),
        items,
    };
    let mpath = out_dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| DimpError::io(&mpath, e))?;
    Ok(manifest)
}

/// A loaded sequence with its standardized motion target.
#[derive(Debug, Clone)]
pub struct Item {
    pub sequence: DynamicPointCloud,
    /// Displacements divided by the dataset scale.
    pub motion: Tensor,
    pub label: usize,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub items: Vec<Item>,
    /// Scale the motion targets were divided by.
    pub motion_rms: f64,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let mpath = root.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| DimpError::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DimpError::VersionMismatch {
                path: mpath,
                expected: MANIFEST_VERSION.to_string(),
                found: manifest.version.to_string(),
            });
        }
        let mut items = Vec::with_capacity(manifest.items.len());
        let mut scale = 0.0;
        for it in &manifest.items {
            let sequence = read_dpc1(&root.join(&it.path))?;
            let mot = read_mot1(&root.join(&it.motion_path))?;
            if mot.displacements.nrows() != sequence.points_per_frame()
                || mot.displacements.ncols() != 3 * (sequence.num_frames() - 1)
            {
                return Err(DimpError::CorruptFile {
                    path: root.join(&it.motion_path),
                    reason: "motion field does not match its sequence".into(),
                });
            }
            scale = mot.rms;
            items.push(Item {
                sequence,
                motion: mot.standardized(),
                label: it.label,
                split: it.split,
                seed: it.seed,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            items,
            motion_rms: scale,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.items.len()).filter(|&i| self.items[i].split == split).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for it in &self.items {
            *m.entry(it.label).or_insert(0) += 1;
        }
        m
    }
}
