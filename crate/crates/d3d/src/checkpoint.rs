//! Binary checkpoint container.
//!
//! Little-endian layout: 8-byte magic, version u32, entry count u32, then
//! an entry table of (name length u32, name bytes, dtype code u32, rank
//! u32, extents u32 each, payload byte offset u64), then the raw payloads.
//! Entries are written in sorted name order with densely packed payloads,
//! so save -> load -> save is byte-identical.

use crate::camera::{AngleDist, CameraPrior};
use crate::discriminator::DiscConfig;
use crate::error::{D3dError, Result};
use crate::generator::GeneratorConfig;
use crate::losses::LossWeights;
use crate::params::ParamSet;
use crate::render::RenderConfig;
use crate::tensor::adam::AdamState;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const CKPT_MAGIC: &[u8; 8] = b"D3DCKPT0";
pub const EMBED_MAGIC: &[u8; 8] = b"D3DEMB0\0";
pub const CKPT_VERSION: u32 = 1;

const DTYPE_F32: u32 = 0;
const DTYPE_U32: u32 = 1;

/// One stored array.
#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F32(Vec<usize>, Vec<f32>),
    U32(Vec<usize>, Vec<u32>),
}

impl Entry {
    fn dtype(&self) -> u32 {
        match self {
            Entry::F32(..) => DTYPE_F32,
            Entry::U32(..) => DTYPE_U32,
        }
    }
    fn shape(&self) -> &[usize] {
        match self {
            Entry::F32(s, _) | Entry::U32(s, _) => s,
        }
    }
    fn payload_len(&self) -> usize {
        match self {
            Entry::F32(_, d) => 4 * d.len(),
            Entry::U32(_, d) => 4 * d.len(),
        }
    }

    pub fn as_f32(&self) -> Result<(&[usize], &[f32])> {
        match self {
            Entry::F32(s, d) => Ok((s, d)),
            Entry::U32(..) => Err(D3dError::Checkpoint("entry is u32, expected f32".into())),
        }
    }

    pub fn as_u32(&self) -> Result<(&[usize], &[u32])> {
        match self {
            Entry::U32(s, d) => Ok((s, d)),
            Entry::F32(..) => Err(D3dError::Checkpoint("entry is f32, expected u32".into())),
        }
    }
}

/// A named collection of arrays under one magic.
#[derive(Clone, Debug, Default)]
pub struct Container {
    pub entries: BTreeMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn put_f32(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries
            .insert(name.into(), Entry::F32(shape.to_vec(), data));
    }

    pub fn put_u32(&mut self, name: impl Into<String>, data: Vec<u32>) {
        let n = data.len();
        self.entries.insert(name.into(), Entry::U32(vec![n], data));
    }

    pub fn put_tensor(&mut self, name: impl Into<String>, t: &Tensor<f32>) {
        self.put_f32(name, t.shape(), t.data().to_vec());
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| D3dError::Checkpoint(format!("missing entry {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor<f32>> {
        let (shape, data) = self.get(name)?.as_f32()?;
        Ok(Tensor::from_vec(shape, data.to_vec()))
    }

    pub fn u32s(&self, name: &str) -> Result<Vec<u32>> {
        Ok(self.get(name)?.as_u32()?.1.to_vec())
    }

    pub fn f32s(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.get(name)?.as_f32()?.1.to_vec())
    }

    /// Serialize. The write is atomic (temp file + rename).
    pub fn save(&self, path: &Path, magic: &[u8; 8]) -> Result<()> {
        let mut header = Vec::new();
        header.extend_from_slice(magic);
        header.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut payload: Vec<u8> = Vec::new();
        for (name, entry) in &self.entries {
            let offset = payload.len() as u64;
            header.extend_from_slice(&(name.len() as u32).to_le_bytes());
            header.extend_from_slice(name.as_bytes());
            header.extend_from_slice(&entry.dtype().to_le_bytes());
            header.extend_from_slice(&(entry.shape().len() as u32).to_le_bytes());
            for &e in entry.shape() {
                header.extend_from_slice(&(e as u32).to_le_bytes());
            }
            header.extend_from_slice(&offset.to_le_bytes());
            match entry {
                Entry::F32(_, d) => {
                    for v in d {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::U32(_, d) => {
                    for v in d {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&header)?;
            f.write_all(&payload)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Deserialize, verifying the magic and structural integrity.
    pub fn load(path: &Path, magic: &[u8; 8]) -> Result<Container> {
        let bytes = std::fs::read(path)?;
        let need = |end: usize| -> Result<()> {
            if bytes.len() < end {
                Err(D3dError::Checkpoint(format!(
                    "{}: truncated at offset {end} (file is {} bytes)",
                    path.display(),
                    bytes.len()
                )))
            } else {
                Ok(())
            }
        };
        need(16)?;
        if &bytes[0..8] != magic {
            return Err(D3dError::Checkpoint(format!(
                "{}: bad magic at offset 0 (expected {:?})",
                path.display(),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(D3dError::Checkpoint(format!(
                "{}: stored version {version}, supported {CKPT_VERSION}",
                path.display()
            )));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut pos = 16usize;
        let mut meta: Vec<(String, u32, Vec<usize>, u64)> = Vec::with_capacity(count);
        for _ in 0..count {
            need(pos + 4)?;
            let nlen = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            need(pos + nlen)?;
            let name = String::from_utf8(bytes[pos..pos + nlen].to_vec())
                .map_err(|_| D3dError::Checkpoint(format!("bad name at offset {pos}")))?;
            pos += nlen;
            need(pos + 8)?;
            let dtype = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            let rank = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
            pos += 8;
            need(pos + 4 * rank)?;
            let shape: Vec<usize> = (0..rank)
                .map(|i| {
                    u32::from_le_bytes(bytes[pos + 4 * i..pos + 4 * i + 4].try_into().unwrap())
                        as usize
                })
                .collect();
            pos += 4 * rank;
            need(pos + 8)?;
            let offset = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            pos += 8;
            meta.push((name, dtype, shape, offset));
        }
        let payload_start = pos;
        let mut entries = BTreeMap::new();
        for (name, dtype, shape, offset) in meta {
            let numel: usize = shape.iter().product();
            let start = payload_start + offset as usize;
            let end = start + 4 * numel;
            need(end)?;
            let entry = match dtype {
                DTYPE_F32 => Entry::F32(
                    shape,
                    bytes[start..end]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                DTYPE_U32 => Entry::U32(
                    shape,
                    bytes[start..end]
                        .chunks_exact(4)
                        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                other => {
                    return Err(D3dError::Checkpoint(format!(
                        "unknown dtype code {other} for {name}"
                    )))
                }
            };
            entries.insert(name, entry);
        }
        Ok(Container { entries })
    }
}

// ---- helpers shared by checkpoint/embedding serialization ----

pub fn put_params(c: &mut Container, prefix: &str, params: &ParamSet<f32>) {
    for (name, t) in params.iter() {
        c.put_tensor(format!("{prefix}/{name}"), t);
    }
}

pub fn get_params(c: &Container, prefix: &str) -> Result<ParamSet<f32>> {
    let mut out = ParamSet::new();
    let want = format!("{prefix}/");
    for (name, entry) in &c.entries {
        if let Some(stripped) = name.strip_prefix(&want) {
            let (shape, data) = entry.as_f32()?;
            out.insert(stripped.to_string(), Tensor::from_vec(shape, data.to_vec()));
        }
    }
    Ok(out)
}

pub fn put_u64(c: &mut Container, name: &str, v: u64) {
    c.put_u32(name, vec![(v >> 32) as u32, v as u32]);
}

pub fn get_u64(c: &Container, name: &str) -> Result<u64> {
    let v = c.u32s(name)?;
    if v.len() != 2 {
        return Err(D3dError::Checkpoint(format!("{name}: want 2 words")));
    }
    Ok(((v[0] as u64) << 32) | v[1] as u64)
}

fn put_adam(c: &mut Container, prefix: &str, st: &AdamState<f32>) {
    for (name, t) in &st.m {
        c.put_tensor(format!("{prefix}.m/{name}"), t);
    }
    for (name, t) in &st.v {
        c.put_tensor(format!("{prefix}.v/{name}"), t);
    }
    put_u64(c, &format!("{prefix}.step"), st.step);
    c.put_f32(
        format!("{prefix}.betas"),
        &[3],
        vec![st.beta1 as f32, st.beta2 as f32, st.eps as f32],
    );
}

fn get_adam(c: &Container, prefix: &str, params: &ParamSet<f32>) -> Result<AdamState<f32>> {
    let betas = c.f32s(&format!("{prefix}.betas"))?;
    let mut st = AdamState::with_betas(
        params,
        betas[0] as f64,
        betas[1] as f64,
        betas[2] as f64,
    );
    st.step = get_u64(c, &format!("{prefix}.step"))?;
    for (name, slot) in st.m.iter_mut() {
        *slot = c.tensor(&format!("{prefix}.m/{name}"))?;
    }
    for (name, slot) in st.v.iter_mut() {
        *slot = c.tensor(&format!("{prefix}.v/{name}"))?;
    }
    Ok(st)
}

/// Mutable training bookkeeping stored in checkpoints.
#[derive(Clone)]
pub struct TrainState {
    pub step: u64,
    pub stage: u32,
    pub seed: u64,
    pub adam_gen: AdamState<f32>,
    pub adam_disc: AdamState<f32>,
    pub adam_inv: Option<AdamState<f32>>,
    /// Running mean of FiLM parameters over generator samples (embedding
    /// regularizer target) and its sample count.
    pub film_mean: Tensor<f32>,
    pub film_count: u64,
}

/// Everything a run needs to continue or a downstream tool needs to render.
#[derive(Clone)]
pub struct Checkpoint {
    pub gen_cfg: GeneratorConfig,
    pub disc_cfg: DiscConfig,
    pub render_cfg: RenderConfig,
    pub prior: CameraPrior,
    pub weights: LossWeights,
    pub gen: ParamSet<f32>,
    pub disc: ParamSet<f32>,
    pub inv: Option<ParamSet<f32>>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let g = &self.gen_cfg;
        c.put_u32(
            "meta/gen.dims",
            vec![
                g.latent_dim as u32,
                g.hidden_dim as u32,
                g.d_g as u32,
                g.d_a as u32,
                g.canonical_depth as u32,
            ],
        );
        c.put_f32(
            "meta/gen.omega",
            &[2],
            vec![g.omega0 as f32, g.omega0_shift as f32],
        );
        let d = &self.disc_cfg;
        c.put_u32(
            "meta/disc.dims",
            vec![d.resolution as u32, d.base_channels as u32, d.max_channels as u32],
        );
        let r = &self.render_cfg;
        c.put_u32(
            "meta/render.dims",
            vec![
                r.height as u32,
                r.width as u32,
                r.n_coarse as u32,
                r.n_fine as u32,
                r.jitter as u32,
            ],
        );
        c.put_f32("meta/render.bounds", &[2], vec![r.near as f32, r.far as f32]);
        let p = &self.prior;
        c.put_u32(
            "meta/prior.dists",
            vec![
                matches!(p.yaw_dist, AngleDist::Uniform) as u32,
                matches!(p.pitch_dist, AngleDist::Uniform) as u32,
            ],
        );
        c.put_f32(
            "meta/prior.params",
            &[4],
            vec![
                p.yaw_std as f32,
                p.pitch_std as f32,
                p.radius as f32,
                p.fov_deg as f32,
            ],
        );
        let w = &self.weights;
        c.put_f32(
            "meta/loss",
            &[7],
            vec![
                w.lambda_r1 as f32,
                w.lambda_pose as f32,
                w.lambda_img as f32,
                w.lambda_inv as f32,
                w.lambda_perc as f32,
                w.lambda_reg as f32,
                w.weight_threshold as f32,
            ],
        );
        put_params(&mut c, "params.gen", &self.gen);
        put_params(&mut c, "params.disc", &self.disc);
        if let Some(inv) = &self.inv {
            put_params(&mut c, "params.inv", inv);
        }
        let st = &self.state;
        put_u64(&mut c, "state.step", st.step);
        c.put_u32("state.stage", vec![st.stage]);
        put_u64(&mut c, "state.seed", st.seed);
        put_adam(&mut c, "adam.gen", &st.adam_gen);
        put_adam(&mut c, "adam.disc", &st.adam_disc);
        if let Some(ai) = &st.adam_inv {
            put_adam(&mut c, "adam.inv", ai);
        }
        c.put_tensor("state/film_mean", &st.film_mean);
        put_u64(&mut c, "state.film_count", st.film_count);
        c
    }

    pub fn from_container(c: &Container) -> Result<Checkpoint> {
        let gd = c.u32s("meta/gen.dims")?;
        let go = c.f32s("meta/gen.omega")?;
        let gen_cfg = GeneratorConfig {
            latent_dim: gd[0] as usize,
            hidden_dim: gd[1] as usize,
            d_g: gd[2] as usize,
            d_a: gd[3] as usize,
            canonical_depth: gd[4] as usize,
            omega0: go[0] as f64,
            omega0_shift: go[1] as f64,
        };
        let dd = c.u32s("meta/disc.dims")?;
        let disc_cfg = DiscConfig {
            resolution: dd[0] as usize,
            base_channels: dd[1] as usize,
            max_channels: dd[2] as usize,
        };
        let rd = c.u32s("meta/render.dims")?;
        let rb = c.f32s("meta/render.bounds")?;
        let render_cfg = RenderConfig {
            height: rd[0] as usize,
            width: rd[1] as usize,
            n_coarse: rd[2] as usize,
            n_fine: rd[3] as usize,
            near: rb[0] as f64,
            far: rb[1] as f64,
            jitter: rd[4] != 0,
        };
        let pd = c.u32s("meta/prior.dists")?;
        let pp = c.f32s("meta/prior.params")?;
        let dist = |v: u32| {
            if v == 1 {
                AngleDist::Uniform
            } else {
                AngleDist::Gaussian
            }
        };
        let prior = CameraPrior {
            yaw_dist: dist(pd[0]),
            yaw_std: pp[0] as f64,
            pitch_dist: dist(pd[1]),
            pitch_std: pp[1] as f64,
            radius: pp[2] as f64,
            fov_deg: pp[3] as f64,
        };
        let lw = c.f32s("meta/loss")?;
        let weights = LossWeights {
            lambda_r1: lw[0] as f64,
            lambda_pose: lw[1] as f64,
            lambda_img: lw[2] as f64,
            lambda_inv: lw[3] as f64,
            lambda_perc: lw[4] as f64,
            lambda_reg: lw[5] as f64,
            weight_threshold: lw[6] as f64,
        };
        let gen = get_params(c, "params.gen")?;
        let disc = get_params(c, "params.disc")?;
        let inv_params = get_params(c, "params.inv")?;
        let inv = (!inv_params.is_empty()).then_some(inv_params);
        let adam_gen = get_adam(c, "adam.gen", &gen)?;
        let adam_disc = get_adam(c, "adam.disc", &disc)?;
        let adam_inv = match &inv {
            Some(ip) => Some(get_adam(c, "adam.inv", ip)?),
            None => None,
        };
        let state = TrainState {
            step: get_u64(c, "state.step")?,
            stage: c.u32s("state.stage")?[0],
            seed: get_u64(c, "state.seed")?,
            adam_gen,
            adam_disc,
            adam_inv,
            film_mean: c.tensor("state/film_mean")?,
            film_count: get_u64(c, "state.film_count")?,
        };
        Ok(Checkpoint {
            gen_cfg,
            disc_cfg,
            render_cfg,
            prior,
            weights,
            gen,
            disc,
            inv,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path, CKPT_MAGIC)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_container(&Container::load(path, CKPT_MAGIC)?)
    }
}
