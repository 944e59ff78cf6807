//! Radiance field abstraction: the generator is one implementation,
//! analytic test fields are another (quadrature oracles, planted
//! deformations).

use crate::generator::{
    deform, density_at_canonical, mapping_forward, radiance, FilmParams, GeneratorConfig,
    MappingKind,
};
use crate::num::{c, Elem};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Density and color queried at sample positions.
pub trait RadianceField<T: Elem> {
    /// Density (non-negative) at [P,3] positions.
    fn density(&self, pos: &Tensor<T>) -> Tensor<T>;
    /// Density and color at [P,3] positions with [P,3] unit view
    /// directions. Color components lie in [0,1].
    fn eval(&self, pos: &Tensor<T>, dirs: &Tensor<T>) -> (Tensor<T>, Tensor<T>);
}

/// The generator as a radiance field for one latent pair. FiLM modulation
/// is computed once at construction and reused across every query.
pub struct GeneratorField<'a, T: Elem> {
    pub cfg: &'a GeneratorConfig,
    pub params: &'a ParamSet<T>,
    pub film_g: FilmParams<T>,
    pub film_a: FilmParams<T>,
}

impl<'a, T: Elem> GeneratorField<'a, T> {
    pub fn new(
        cfg: &'a GeneratorConfig,
        params: &'a ParamSet<T>,
        z_g: &Tensor<T>,
        z_a: &Tensor<T>,
    ) -> Self {
        let film_g = mapping_forward(cfg, params, z_g, MappingKind::Geometry);
        let film_a = mapping_forward(cfg, params, z_a, MappingKind::Appearance);
        GeneratorField {
            cfg,
            params,
            film_g,
            film_a,
        }
    }

    /// Reuse precomputed FiLM parameters (embedding path: the encoder
    /// regresses these directly, bypassing the mapping networks).
    pub fn from_film(
        cfg: &'a GeneratorConfig,
        params: &'a ParamSet<T>,
        film_g: FilmParams<T>,
        film_a: FilmParams<T>,
    ) -> Self {
        GeneratorField {
            cfg,
            params,
            film_g,
            film_a,
        }
    }
}

impl<T: Elem> RadianceField<T> for GeneratorField<'_, T> {
    fn density(&self, pos: &Tensor<T>) -> Tensor<T> {
        let def = deform(self.cfg, self.params, pos, &self.film_g);
        density_at_canonical(self.cfg, self.params, &def.canonical)
    }

    fn eval(&self, pos: &Tensor<T>, dirs: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let def = deform(self.cfg, self.params, pos, &self.film_g);
        let sigma = density_at_canonical(self.cfg, self.params, &def.canonical);
        let rgb = radiance(self.cfg, self.params, &def.canonical, dirs, &self.film_a);
        (sigma, rgb)
    }
}

/// Smooth analytic density ball: sigma(p) = peak * exp(-|p-c|^2 / (2 tau^2))
/// with a position-dependent color. Used as a quadrature oracle.
pub struct SphereField {
    pub center: [f64; 3],
    pub tau: f64,
    pub peak: f64,
    pub base_color: [f64; 3],
}

impl SphereField {
    pub fn unit() -> Self {
        SphereField {
            center: [0.0, 0.0, 0.0],
            tau: 0.12,
            peak: 40.0,
            base_color: [0.7, 0.4, 0.2],
        }
    }
}

impl<T: Elem> RadianceField<T> for SphereField {
    fn density(&self, pos: &Tensor<T>) -> Tensor<T> {
        let p = pos.shape()[0];
        let center = Tensor::from_f64_slice(&[3], &self.center);
        let d = pos.sub(&center);
        d.mul(&d)
            .sum_axis(1)
            .reshape(&[p])
            .scale(-1.0 / (2.0 * self.tau * self.tau))
            .exp()
            .scale(self.peak)
    }

    fn eval(&self, pos: &Tensor<T>, _dirs: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let sigma = self.density(pos);
        // Color varies smoothly with height around the base color.
        let p = pos.shape()[0];
        let y = pos.slice(1, 1, 1).reshape(&[p, 1]);
        let base = Tensor::from_f64_slice(&[1, 3], &self.base_color);
        let swing = y.scale(2.0).sin().scale(0.2);
        let rgb = base.add(&swing).sigmoid();
        (sigma, rgb)
    }
}

/// Constant-density, constant-color slab (closed-form transmittance).
pub struct ConstantField {
    pub sigma: f64,
    pub color: [f64; 3],
}

impl<T: Elem> RadianceField<T> for ConstantField {
    fn density(&self, pos: &Tensor<T>) -> Tensor<T> {
        Tensor::full(&[pos.shape()[0]], c(self.sigma))
    }

    fn eval(&self, pos: &Tensor<T>, _dirs: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let p = pos.shape()[0];
        let col: Vec<T> = (0..p)
            .flat_map(|_| self.color.iter().map(|&v| c(v)))
            .collect();
        (self.density(pos), Tensor::from_vec(&[p, 3], col))
    }
}

/// A field wrapping another with a planted affine deformation
/// x' = A x + t applied before the inner query. Exercises correspondence
/// logic against a closed-form map.
pub struct AffineWarpedField<F> {
    pub inner: F,
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl<T: Elem, F: RadianceField<T>> RadianceField<T> for AffineWarpedField<F> {
    fn density(&self, pos: &Tensor<T>) -> Tensor<T> {
        self.inner.density(&self.warp(pos))
    }

    fn eval(&self, pos: &Tensor<T>, dirs: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        self.inner.eval(&self.warp(pos), dirs)
    }
}

impl<F> AffineWarpedField<F> {
    fn warp<T: Elem>(&self, pos: &Tensor<T>) -> Tensor<T> {
        let flat: Vec<f64> = self.matrix.iter().flatten().copied().collect();
        let a = Tensor::from_f64_slice(&[3, 3], &flat);
        let t = Tensor::from_f64_slice(&[3], &self.translation);
        pos.matmul(&a.t()).add(&t)
    }
}
