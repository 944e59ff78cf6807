//! The disentangled generator: two mapping networks producing FiLM
//! modulation, a deformation network mapping world points into a shared
//! canonical space, a canonical density network, an appearance network,
//! and an optional inverse deformation network.
//!
//! Disentanglement is structural: density never sees the appearance code,
//! and the appearance network receives the geometry code only through the
//! 3-dimensional canonical coordinate.

use crate::error::{D3dError, Result};
use crate::num::{c, Elem};
use crate::params::ParamSet;
use crate::rng::RngKey;
use crate::tensor::ops::concat;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Sine-layer count of the deformation network's main MLP.
    pub d_g: usize,
    /// Sine-layer count of the appearance network's main MLP. The view
    /// direction enters at the last of these (the penultimate layer
    /// overall), so at least 2 are required.
    pub d_a: usize,
    /// Total layer count of the canonical network, linear head included.
    pub canonical_depth: usize,
    /// First-layer frequency scale of plain sine layers.
    pub omega0: f64,
    /// Additive frequency offset applied to FiLM modulation:
    /// sin((gamma + omega0_shift) * (W h + b) + beta).
    pub omega0_shift: f64,
}

impl GeneratorConfig {
    /// CPU-friendly widths; the published widths remain available via
    /// [`GeneratorConfig::paper`].
    pub fn desk() -> Self {
        GeneratorConfig {
            latent_dim: 64,
            hidden_dim: 64,
            d_g: 3,
            d_a: 2,
            canonical_depth: 5,
            omega0: 30.0,
            omega0_shift: 15.0,
        }
    }

    /// Published architecture for head-like datasets.
    pub fn paper() -> Self {
        GeneratorConfig {
            latent_dim: 256,
            hidden_dim: 256,
            d_g: 5,
            d_a: 3,
            canonical_depth: 5,
            omega0: 30.0,
            omega0_shift: 15.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_dim == 0 || self.canonical_depth < 2 {
            return Err(D3dError::Config(
                "generator dims must be positive (canonical_depth >= 2)".into(),
            ));
        }
        if self.d_g < 1 {
            return Err(D3dError::Config("d_g must be >= 1".into()));
        }
        if self.d_a < 2 {
            return Err(D3dError::Config(
                "d_a must be >= 2 (view direction enters the penultimate layer)".into(),
            ));
        }
        Ok(())
    }

    /// Flat mapping-network output width for one main network of `d` layers.
    pub fn film_width(&self, d: usize) -> usize {
        2 * self.hidden_dim * d
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::desk()
    }
}

/// Which mapping network to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappingKind {
    Geometry,
    Appearance,
}

impl MappingKind {
    fn prefix(self) -> &'static str {
        match self {
            MappingKind::Geometry => "map_g",
            MappingKind::Appearance => "map_a",
        }
    }
}

/// Per-layer FiLM modulation (frequency and phase vectors) for one main
/// network, as produced by a mapping network.
#[derive(Clone)]
pub struct FilmParams<T: Elem> {
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Elem> FilmParams<T> {
    /// Flatten back to the mapping head layout: per layer, frequencies then
    /// phases.
    pub fn flatten(&self) -> Tensor<T> {
        let parts: Vec<Tensor<T>> = self
            .layers
            .iter()
            .flat_map(|(g, b)| [g.clone(), b.clone()])
            .collect();
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        concat(&refs, 0)
    }

    /// Inverse of [`FilmParams::flatten`].
    pub fn from_flat(flat: &Tensor<T>, hidden: usize, d: usize) -> Self {
        assert_eq!(flat.numel(), 2 * hidden * d, "film width mismatch");
        let layers = (0..d)
            .map(|i| {
                (
                    flat.slice(0, 2 * hidden * i, hidden),
                    flat.slice(0, 2 * hidden * i + hidden, hidden),
                )
            })
            .collect();
        FilmParams { layers }
    }

    pub fn detach(&self) -> Self {
        FilmParams {
            layers: self
                .layers
                .iter()
                .map(|(g, b)| (g.detach(), b.detach()))
                .collect(),
        }
    }
}

/// Deformation of a batch of points: x' = x + offset.
pub struct Deformation<T: Elem> {
    /// N_G output, exactly 3 numbers per point.
    pub offset: Tensor<T>,
    /// Input points in deformed (world) space.
    pub input: Tensor<T>,
    /// Canonical coordinates x' = x + offset.
    pub canonical: Tensor<T>,
}

// ---- initialization ----

fn uniform_tensor<T: Elem>(shape: &[usize], limit: f64, key: RngKey) -> Tensor<T> {
    let mut s = key.stream();
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| c(s.uniform_in(-limit, limit))).collect(),
    )
}

struct InitCursor {
    key: RngKey,
    next: u64,
}

impl InitCursor {
    fn new(key: RngKey) -> Self {
        InitCursor { key, next: 0 }
    }
    fn draw<T: Elem>(&mut self, shape: &[usize], limit: f64) -> Tensor<T> {
        let t = uniform_tensor(shape, limit, self.key.child(self.next));
        self.next += 1;
        t
    }
}

fn init_mapping<T: Elem>(
    params: &mut ParamSet<T>,
    cur: &mut InitCursor,
    prefix: &str,
    cfg: &GeneratorConfig,
    d: usize,
) {
    let h = cfg.hidden_dim;
    let sizes = [(cfg.latent_dim, h), (h, h), (h, h), (h, 2 * h * d)];
    for (i, (fan_in, fan_out)) in sizes.into_iter().enumerate() {
        let limit = (1.0 / fan_in as f64).sqrt();
        params.insert(
            format!("{prefix}.l{i}.w"),
            cur.draw::<T>(&[fan_in, fan_out], limit),
        );
        params.insert(format!("{prefix}.l{i}.b"), Tensor::zeros(&[fan_out]));
    }
}

/// Sine-layer weight limits: enlarged first layer, SIREN fan-in elsewhere.
fn sine_limit(fan_in: usize, first: bool, omega: f64) -> f64 {
    if first {
        1.0 / fan_in as f64
    } else {
        (6.0 / fan_in as f64).sqrt() / omega
    }
}

fn init_film_net<T: Elem>(
    params: &mut ParamSet<T>,
    cur: &mut InitCursor,
    prefix: &str,
    cfg: &GeneratorConfig,
    d: usize,
    view_layer: Option<usize>,
    head_out: usize,
    zero_head: bool,
) {
    let h = cfg.hidden_dim;
    for i in 0..d {
        let mut fan_in = if i == 0 { 3 } else { h };
        if view_layer == Some(i) {
            fan_in += 3;
        }
        let limit = sine_limit(fan_in, i == 0, cfg.omega0_shift);
        params.insert(
            format!("{prefix}.l{i}.w"),
            cur.draw::<T>(&[fan_in, h], limit),
        );
        params.insert(format!("{prefix}.l{i}.b"), Tensor::zeros(&[h]));
    }
    let head_w = if zero_head {
        Tensor::zeros(&[h, head_out])
    } else {
        cur.draw::<T>(&[h, head_out], sine_limit(h, false, cfg.omega0_shift))
    };
    params.insert(format!("{prefix}.head.w"), head_w);
    params.insert(format!("{prefix}.head.b"), Tensor::zeros(&[head_out]));
}

/// Initialize all generator parameters (mapping networks, deformation,
/// canonical, appearance). The deformation head starts at exactly zero, so
/// the first-iteration deformation field vanishes everywhere.
pub fn init_generator<T: Elem>(cfg: &GeneratorConfig, key: RngKey) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    let mut cur = InitCursor::new(key.child(1));
    init_mapping(&mut params, &mut cur, "map_g", cfg, cfg.d_g);
    let mut cur = InitCursor::new(key.child(2));
    init_mapping(&mut params, &mut cur, "map_a", cfg, cfg.d_a);
    let mut cur = InitCursor::new(key.child(3));
    init_film_net(&mut params, &mut cur, "ng", cfg, cfg.d_g, None, 3, true);
    let mut cur = InitCursor::new(key.child(4));
    init_film_net(
        &mut params,
        &mut cur,
        "na",
        cfg,
        cfg.d_a,
        Some(cfg.d_a - 1),
        3,
        false,
    );
    // Canonical network: plain sine layers, no conditioning.
    let mut cur = InitCursor::new(key.child(5));
    let h = cfg.hidden_dim;
    for i in 0..cfg.canonical_depth - 1 {
        let fan_in = if i == 0 { 3 } else { h };
        params.insert(
            format!("nc.l{i}.w"),
            cur.draw::<T>(&[fan_in, h], sine_limit(fan_in, i == 0, cfg.omega0)),
        );
        params.insert(format!("nc.l{i}.b"), Tensor::zeros(&[h]));
    }
    params.insert(
        "nc.head.w",
        cur.draw::<T>(&[h, 1], sine_limit(h, false, cfg.omega0)),
    );
    params.insert("nc.head.b", Tensor::zeros(&[1]));
    Ok(params)
}

/// Initialize the inverse deformation network (same architecture and
/// zero-head initialization as the deformation network). Kept in its own
/// parameter set so its training stage cannot touch the generator.
pub fn init_inverse<T: Elem>(cfg: &GeneratorConfig, key: RngKey) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    let mut cur = InitCursor::new(key.child(6));
    init_film_net(&mut params, &mut cur, "ni", cfg, cfg.d_g, None, 3, true);
    Ok(params)
}

// ---- forward passes ----

fn linear<T: Elem>(params: &ParamSet<T>, name: &str, x: &Tensor<T>) -> Tensor<T> {
    x.matmul(params.get(&format!("{name}.w")))
        .add(params.get(&format!("{name}.b")))
}

/// Evaluate a mapping network: latent vector -> per-layer FiLM modulation.
pub fn mapping_forward<T: Elem>(
    cfg: &GeneratorConfig,
    params: &ParamSet<T>,
    z: &Tensor<T>,
    which: MappingKind,
) -> FilmParams<T> {
    assert_eq!(
        z.numel(),
        cfg.latent_dim,
        "mapping_forward: latent must have {} entries, got {:?}",
        cfg.latent_dim,
        z.shape()
    );
    let prefix = which.prefix();
    let d = match which {
        MappingKind::Geometry => cfg.d_g,
        MappingKind::Appearance => cfg.d_a,
    };
    let mut h = z.reshape(&[1, cfg.latent_dim]);
    for i in 0..3 {
        h = linear(params, &format!("{prefix}.l{i}"), &h).leaky_relu(0.2);
    }
    let flat = linear(params, &format!("{prefix}.l3"), &h).reshape(&[cfg.film_width(d)]);
    FilmParams::from_flat(&flat, cfg.hidden_dim, d)
}

/// One FiLM-modulated sine layer: sin((gamma + shift) * (x W + b) + beta).
pub fn film_sine_layer<T: Elem>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    shift: f64,
) -> Tensor<T> {
    let pre = x.matmul(w).add(b);
    pre.mul(&gamma.add_scalar(shift)).add(beta).sin()
}

fn film_net_forward<T: Elem>(
    cfg: &GeneratorConfig,
    params: &ParamSet<T>,
    prefix: &str,
    x: &Tensor<T>,
    film: &FilmParams<T>,
    view: Option<&Tensor<T>>,
    view_layer: Option<usize>,
) -> Tensor<T> {
    let d = film.layers.len();
    let mut h = x.clone();
    for (i, (gamma, beta)) in film.layers.iter().enumerate() {
        if view_layer == Some(i) {
            let v = view.expect("view direction required at this layer");
            h = concat(&[&h, v], 1);
        }
        h = film_sine_layer(
            &h,
            params.get(&format!("{prefix}.l{i}.w")),
            params.get(&format!("{prefix}.l{i}.b")),
            gamma,
            beta,
            cfg.omega0_shift,
        );
    }
    let _ = d;
    linear(params, &format!("{prefix}.head"), &h)
}

/// Deformation network: world points [P,3] -> canonical points, with the
/// 3-dimensional offsets exposed.
pub fn deform<T: Elem>(
    cfg: &GeneratorConfig,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    film_g: &FilmParams<T>,
) -> Deformation<T> {
    assert_eq!(x.shape().len(), 2, "deform: points must be [P,3]");
    assert_eq!(x.shape()[1], 3, "deform: points must be [P,3]");
    let offset = film_net_forward(cfg, params, "ng", x, film_g, None, None);
    debug_assert_eq!(offset.shape()[1], 3);
    let canonical = x.add(&offset);
    Deformation {
        offset,
        input: x.clone(),
        canonical,
    }
}

/// Canonical density at canonical points: softplus of the head output, so
/// the returned values are already non-negative.
pub fn density_at_canonical<T: Elem>(
    cfg: &GeneratorConfig,
    params: &ParamSet<T>,
    x_prime: &Tensor<T>,
) -> Tensor<T> {
    let p = x_prime.shape()[0];
    let mut h = x_prime.clone();
    for i in 0..cfg.canonical_depth - 1 {
        h = linear(params, &format!("nc.l{i}"), &h)
            .scale(cfg.omega0)
            .sin();
    }
    linear(params, "nc.head", &h).softplus().reshape(&[p])
}

/// Volume density sigma(x, z_G) >= 0 at world points.
pub fn density<T: Elem>(
    cfg: &GeneratorConfig,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    film_g: &FilmParams<T>,
) -> Tensor<T> {
    let def = deform(cfg, params, x, film_g);
    density_at_canonical(cfg, params, &def.canonical)
}

/// View-dependent radiance at canonical points; every component in (0,1).
/// Directions are normalized (with a warning) when off unit length by more
/// than 1e-4.
pub fn radiance<T: Elem>(
    cfg: &GeneratorConfig,
    params: &ParamSet<T>,
    x_prime: &Tensor<T>,
    dirs: &Tensor<T>,
    film_a: &FilmParams<T>,
) -> Tensor<T> {
    let dirs = ensure_unit(dirs);
    let raw = film_net_forward(
        cfg,
        params,
        "na",
        x_prime,
        film_a,
        Some(&dirs),
        Some(cfg.d_a - 1),
    );
    raw.sigmoid()
}

fn ensure_unit<T: Elem>(dirs: &Tensor<T>) -> Tensor<T> {
    let p = dirs.shape()[0];
    let mut worst = 0.0f64;
    for i in 0..p {
        let (x, y, z) = (
            dirs.data()[3 * i].as_f64(),
            dirs.data()[3 * i + 1].as_f64(),
            dirs.data()[3 * i + 2].as_f64(),
        );
        worst = worst.max(((x * x + y * y + z * z).sqrt() - 1.0).abs());
    }
    if worst <= 1e-4 {
        return dirs.clone();
    }
    eprintln!("radiance: non-unit view directions (off by {worst:.2e}); normalizing");
    let sq = dirs.mul(dirs).sum_axis(1).max_scalar(1e-24).sqrt();
    dirs.div(&sq)
}

/// Inverse deformation: canonical points [P,3] -> deformed-space points
/// x_I = x' + N_I(x', z_G). Requires the inverse parameter set.
pub fn inverse_deform<T: Elem>(
    cfg: &GeneratorConfig,
    inv_params: &ParamSet<T>,
    x_prime: &Tensor<T>,
    film_g: &FilmParams<T>,
) -> Result<Tensor<T>> {
    if !inv_params.contains("ni.head.w") {
        return Err(D3dError::Stage(
            "inverse network not initialized (inverse training has not begun)".into(),
        ));
    }
    let offset = film_net_forward(cfg, inv_params, "ni", x_prime, film_g, None, None);
    Ok(x_prime.add(&offset))
}

/// Draw a latent pair (z_G, z_A) from the unit Gaussian prior.
pub fn sample_latents<T: Elem>(cfg: &GeneratorConfig, key: RngKey) -> (Tensor<T>, Tensor<T>) {
    let mut sg = key.child(0).stream();
    let mut sa = key.child(1).stream();
    let zg = Tensor::from_vec(
        &[cfg.latent_dim],
        (0..cfg.latent_dim).map(|_| c(sg.normal())).collect(),
    );
    let za = Tensor::from_vec(
        &[cfg.latent_dim],
        (0..cfg.latent_dim).map(|_| c(sa.normal())).collect(),
    );
    (zg, za)
}
