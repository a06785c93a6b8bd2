//! Analysis and synthesis transforms: a two-branch encoder (per-point MLP
//! with max pooling alongside a stack of set-abstraction layers) mapping a
//! cloud to a length-l latent, and a two-branch fully connected decoder
//! mapping the latent back to n points.
//!
//! Grouping structure (FPS centers, kNN neighborhoods) depends only on the
//! input coordinates, so it is planned once per cloud and replayed across
//! training steps.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{ByteReader, ParamStore, Tape, Tensor, VarId};
use crate::geom::{farthest_point_sample, group};
use crate::pointset::{Point, PointCloud};
use crate::{Error, Result};

/// One set-abstraction level: sample `n_out` centers by FPS, group `k`
/// nearest neighbors, run a shared two-layer MLP to `f_out` features, max
/// pool within each group.
#[derive(Debug, Clone, PartialEq)]
pub struct SaLevel {
    pub n_out: usize,
    pub f_out: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n: usize,
    pub sa: Vec<SaLevel>,
    /// Shared per-point MLP widths for the global branch; last entry is f'.
    pub global_widths: Vec<usize>,
    pub latent: usize,
}

impl EncoderConfig {
    pub fn f_prime(&self) -> usize {
        *self.global_widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.latent < 1 {
            return bad("latent length must be >= 1".into());
        }
        if self.global_widths.is_empty() {
            return bad("global branch needs at least one layer".into());
        }
        if self.sa.is_empty() || self.sa.last().unwrap().n_out != 1 {
            return bad("final set-abstraction level must keep exactly 1 point".into());
        }
        let mut prev_n = self.n;
        for (j, level) in self.sa.iter().enumerate() {
            if level.n_out == 0 || level.n_out > prev_n {
                return bad(format!(
                    "sa level {j}: n_out {} outside 1..={prev_n}",
                    level.n_out
                ));
            }
            if level.k == 0 || level.k > prev_n {
                return bad(format!("sa level {j}: k {} outside 1..={prev_n}", level.k));
            }
            prev_n = level.n_out;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub hidden: Vec<usize>,
    pub points_per_branch: usize,
}

impl DecoderConfig {
    pub fn output_points(&self) -> usize {
        2 * self.points_per_branch
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.points_per_branch == 0 {
            return Err(Error::InvalidArgument(
                "decoder needs hidden layers and a positive branch size".into(),
            ));
        }
        Ok(())
    }
}

/// Full-scale configuration (2048-point clouds, l = 1024).
pub fn full_scale() -> (EncoderConfig, DecoderConfig) {
    (
        EncoderConfig {
            n: 2048,
            sa: vec![
                SaLevel { n_out: 512, f_out: 256, k: 32 },
                SaLevel { n_out: 128, f_out: 512, k: 16 },
                SaLevel { n_out: 1, f_out: 512, k: 128 },
            ],
            global_widths: vec![64, 128, 512],
            latent: 1024,
        },
        DecoderConfig {
            hidden: vec![512, 512, 1024],
            points_per_branch: 1024,
        },
    )
}

/// Downscaled configuration for fast experiments (256-point clouds, l = 64).
pub fn toy_scale() -> (EncoderConfig, DecoderConfig) {
    (
        EncoderConfig {
            n: 256,
            sa: vec![
                SaLevel { n_out: 64, f_out: 32, k: 16 },
                SaLevel { n_out: 16, f_out: 64, k: 8 },
                SaLevel { n_out: 1, f_out: 64, k: 16 },
            ],
            global_widths: vec![32, 64],
            latent: 64,
        },
        DecoderConfig {
            hidden: vec![64, 64, 128],
            points_per_branch: 128,
        },
    )
}

/// Minimal configuration (16-point clouds, l = 8) for gradient checks and
/// fast pipeline tests.
pub fn tiny_scale() -> (EncoderConfig, DecoderConfig) {
    (
        EncoderConfig {
            n: 16,
            sa: vec![
                SaLevel { n_out: 8, f_out: 8, k: 4 },
                SaLevel { n_out: 4, f_out: 16, k: 4 },
                SaLevel { n_out: 1, f_out: 16, k: 4 },
            ],
            global_widths: vec![8, 16],
            latent: 8,
        },
        DecoderConfig {
            hidden: vec![16, 32],
            points_per_branch: 8,
        },
    )
}

/// Precomputed grouping structure for one cloud: per level, the FPS center
/// indices (into the previous level's points), flattened neighbor indices,
/// and centered neighbor coordinates.
#[derive(Debug, Clone)]
pub struct LevelPlan {
    pub centers: Vec<usize>,
    pub neighbor_idx: Vec<usize>,
    pub relative: Tensor,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct GroupingPlan {
    pub levels: Vec<LevelPlan>,
}

impl GroupingPlan {
    pub fn build(pc: &PointCloud, cfg: &EncoderConfig, seed: u64) -> Result<GroupingPlan> {
        cfg.validate()?;
        if pc.len() != cfg.n {
            return Err(Error::ShapeMismatch {
                op: "grouping",
                details: format!("cloud has {} points, config expects {}", pc.len(), cfg.n),
            });
        }
        let mut levels = Vec::with_capacity(cfg.sa.len());
        let mut current = pc.clone();
        for level in &cfg.sa {
            let centers = farthest_point_sample(&current, level.n_out, seed)?;
            let grouped = group(&current, &centers, level.k)?;
            let mut neighbor_idx = Vec::with_capacity(level.n_out * level.k);
            let mut rel = Vec::with_capacity(level.n_out * level.k * 3);
            for g in 0..level.n_out {
                for r in 0..level.k {
                    neighbor_idx.push(grouped.neighbor_idx[g][r]);
                    rel.extend_from_slice(&grouped.relative_coords[g][r]);
                }
            }
            let next_points: Vec<Point> = centers.iter().map(|&c| current.points[c]).collect();
            levels.push(LevelPlan {
                centers,
                neighbor_idx,
                relative: Tensor::new(vec![level.n_out * level.k, 3], rel),
                k: level.k,
            });
            current = PointCloud::new(next_points)?;
        }
        Ok(GroupingPlan { levels })
    }
}

fn linear(tape: &mut Tape, store: &ParamStore, prefix: &str, x: VarId) -> Result<VarId> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let h = tape.matmul(x, w)?;
    tape.add_bias(h, b)
}

fn linear_relu(tape: &mut Tape, store: &ParamStore, prefix: &str, x: VarId) -> Result<VarId> {
    let h = linear(tape, store, prefix, x)?;
    Ok(tape.relu(h))
}

/// Register all encoder/decoder parameters with Glorot-uniform weights.
pub fn init_network_params(
    store: &mut ParamStore,
    enc: &EncoderConfig,
    dec: &DecoderConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    enc.validate()?;
    dec.validate()?;
    let mut fan_in = 3;
    for (i, &w) in enc.global_widths.iter().enumerate() {
        store.insert_linear(&format!("enc.glob{i}"), fan_in, w, rng);
        fan_in = w;
    }
    let mut f_prev = 0;
    for (j, level) in enc.sa.iter().enumerate() {
        let f_in = 3 + f_prev;
        store.insert_linear(&format!("enc.sa{j}.0"), f_in, level.f_out, rng);
        store.insert_linear(&format!("enc.sa{j}.1"), level.f_out, level.f_out, rng);
        f_prev = level.f_out;
    }
    store.insert_linear("enc.fc", f_prev + enc.f_prime(), enc.latent, rng);
    for branch in ["dec.a", "dec.b"] {
        let mut fan_in = enc.latent;
        for (i, &w) in dec.hidden.iter().enumerate() {
            store.insert_linear(&format!("{branch}.{i}"), fan_in, w, rng);
            fan_in = w;
        }
        store.insert_linear(
            &format!("{branch}.out"),
            fan_in,
            dec.points_per_branch * 3,
            rng,
        );
    }
    Ok(())
}

/// Global branch alone: shared per-point MLP then max pool, a symmetric
/// (permutation-invariant) function of the input set.
pub fn global_branch(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    coords: VarId,
) -> Result<VarId> {
    let mut h = coords;
    for i in 0..cfg.global_widths.len() {
        h = linear_relu(tape, store, &format!("enc.glob{i}"), h)?;
    }
    tape.max_pool_rows(h)
}

fn local_branch(
    tape: &mut Tape,
    store: &ParamStore,
    plan: &GroupingPlan,
) -> Result<VarId> {
    let mut feats: Option<VarId> = None;
    for (j, level_plan) in plan.levels.iter().enumerate() {
        let rel = tape.constant(level_plan.relative.clone());
        let input = match feats {
            Some(f) => {
                let gathered = tape.gather_rows(f, &level_plan.neighbor_idx)?;
                tape.concat_cols(rel, gathered)?
            }
            None => rel,
        };
        let h = linear_relu(tape, store, &format!("enc.sa{j}.0"), input)?;
        let h = linear_relu(tape, store, &format!("enc.sa{j}.1"), h)?;
        feats = Some(tape.group_max_pool(h, level_plan.k)?);
    }
    Ok(feats.unwrap())
}

/// Analysis transform: (n, 3) cloud to a (1, l) latent row vector.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    plan: &GroupingPlan,
    pc: &PointCloud,
) -> Result<VarId> {
    if pc.len() != cfg.n {
        return Err(Error::ShapeMismatch {
            op: "encode",
            details: format!("cloud has {} points, config expects {}", pc.len(), cfg.n),
        });
    }
    let coords = tape.constant(cloud_tensor(pc));
    let global = global_branch(tape, store, cfg, coords)?;
    let local = local_branch(tape, store, plan)?;
    let joint = tape.concat_cols(local, global)?;
    linear(tape, store, "enc.fc", joint)
}

/// Synthesis transform: (1, l) latent to an (n, 3) coordinate matrix built
/// from two equal fully connected branches.
pub fn decode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &DecoderConfig,
    latent: VarId,
) -> Result<VarId> {
    let mut halves = Vec::with_capacity(2);
    for branch in ["dec.a", "dec.b"] {
        let mut h = latent;
        for i in 0..cfg.hidden.len() {
            h = linear_relu(tape, store, &format!("{branch}.{i}"), h)?;
        }
        let out = linear(tape, store, &format!("{branch}.out"), h)?;
        halves.push(tape.reshape(out, vec![cfg.points_per_branch, 3])?);
    }
    tape.concat_rows(halves[0], halves[1])
}

pub fn cloud_tensor(pc: &PointCloud) -> Tensor {
    let mut data = Vec::with_capacity(pc.len() * 3);
    for p in &pc.points {
        data.extend_from_slice(p);
    }
    Tensor::new(vec![pc.len(), 3], data)
}

pub fn tensor_cloud(t: &Tensor) -> Result<PointCloud> {
    if t.shape.len() != 2 || t.cols() != 3 {
        return Err(Error::ShapeMismatch {
            op: "tensor_cloud",
            details: format!("{:?}", t.shape),
        });
    }
    let points = t.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    PointCloud::new(points)
}

pub const MODEL_MAGIC: [u8; 4] = *b"VRPM";
pub const MODEL_VERSION: u8 = 1;

/// Trained codec: network and entropy parameters plus the configuration and
/// weight-schedule constants needed to reproduce them.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub schedule_a: f64,
    pub schedule_b: f64,
    pub params: ParamStore,
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MODEL_MAGIC);
        out.push(MODEL_VERSION);
        out.extend_from_slice(&(self.encoder.n as u32).to_le_bytes());
        out.push(self.encoder.sa.len() as u8);
        for level in &self.encoder.sa {
            for v in [level.n_out, level.f_out, level.k] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        out.push(self.encoder.global_widths.len() as u8);
        for &w in &self.encoder.global_widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.encoder.latent as u32).to_le_bytes());
        out.push(self.decoder.hidden.len() as u8);
        for &w in &self.decoder.hidden {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.decoder.points_per_branch as u32).to_le_bytes());
        out.extend_from_slice(&self.schedule_a.to_le_bytes());
        out.extend_from_slice(&self.schedule_b.to_le_bytes());
        out.extend_from_slice(&self.params.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Checkpoint("bad model magic".into()));
        }
        let version = r.u8()?;
        if version != MODEL_VERSION {
            return Err(Error::Checkpoint(format!("unsupported model version {version}")));
        }
        let n = r.u32()? as usize;
        let sa_len = r.u8()? as usize;
        let mut sa = Vec::with_capacity(sa_len);
        for _ in 0..sa_len {
            sa.push(SaLevel {
                n_out: r.u32()? as usize,
                f_out: r.u32()? as usize,
                k: r.u32()? as usize,
            });
        }
        let gw_len = r.u8()? as usize;
        let mut global_widths = Vec::with_capacity(gw_len);
        for _ in 0..gw_len {
            global_widths.push(r.u32()? as usize);
        }
        let latent = r.u32()? as usize;
        let hid_len = r.u8()? as usize;
        let mut hidden = Vec::with_capacity(hid_len);
        for _ in 0..hid_len {
            hidden.push(r.u32()? as usize);
        }
        let points_per_branch = r.u32()? as usize;
        let schedule_a = r.f64()?;
        let schedule_b = r.f64()?;
        let params = ParamStore::from_bytes(&bytes[r.position()..])?;
        let model = Model {
            encoder: EncoderConfig { n, sa, global_widths, latent },
            decoder: DecoderConfig { hidden, points_per_branch },
            schedule_a,
            schedule_b,
            params,
        };
        model.encoder.validate()?;
        model.decoder.validate()?;
        Ok(model)
    }

    /// 8-byte fingerprint embedded in every bitstream this model produces.
    pub fn hash(&self) -> [u8; 8] {
        let digest = Sha256::digest(self.to_bytes());
        digest[..8].try_into().unwrap()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Model> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }
}
