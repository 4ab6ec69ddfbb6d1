use nalgebra::SVector;

use crate::gaussians::{retain_rows, GaussianCloud};
use crate::rasterizer::RenderGrads;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Adam moments for one parameter group, `stride` scalars per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub stride: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn new(stride: usize, rows: usize) -> Self {
        Self {
            stride,
            m: vec![0.0; stride * rows],
            v: vec![0.0; stride * rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.stride
    }

    fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
        lr: f64,
        c1: f64,
        c2: f64,
    ) {
        for (i, (p, g)) in params.zip(grads).enumerate() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        retain_rows(&mut self.m, keep, self.stride);
        retain_rows(&mut self.v, keep, self.stride);
    }

    fn push_zero_rows(&mut self, n: usize) {
        self.m.resize(self.m.len() + n * self.stride, 0.0);
        self.v.resize(self.v.len() + n * self.stride, 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub feature: f64,
}

/// Per-group Adam state, row-aligned with a [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub positions: Moments,
    pub rotations: Moments,
    pub log_scales: Moments,
    pub opacity_logits: Moments,
    pub sh_coeffs: Moments,
}

fn scalars_mut<const D: usize>(v: &mut [SVector<f64, D>]) -> impl Iterator<Item = &mut f64> {
    v.iter_mut().flat_map(|x| x.iter_mut())
}

fn scalars<const D: usize>(v: &[SVector<f64, D>]) -> impl Iterator<Item = f64> + '_ {
    v.iter().flat_map(|x| x.iter().copied())
}

impl Adam {
    pub fn new(rows: usize, sh_count: usize) -> Self {
        Self {
            step: 0,
            positions: Moments::new(3, rows),
            rotations: Moments::new(4, rows),
            log_scales: Moments::new(3, rows),
            opacity_logits: Moments::new(1, rows),
            sh_coeffs: Moments::new(3 * sh_count, rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.positions.rows()
    }

    /// True when every group has exactly `rows` rows.
    pub fn aligned_with(&self, rows: usize) -> bool {
        [
            &self.positions,
            &self.rotations,
            &self.log_scales,
            &self.opacity_logits,
            &self.sh_coeffs,
        ]
        .iter()
        .all(|m| m.rows() == rows)
    }

    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &RenderGrads, lr: &LearningRates) {
        assert!(self.aligned_with(cloud.len()), "optimizer state out of sync with the cloud");
        assert_eq!(grads.len(), cloud.len(), "gradient rows out of sync with the cloud");
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let g = grads;
        self.positions.update(scalars_mut(&mut cloud.positions), scalars(&g.positions), lr.position, c1, c2);
        self.rotations.update(scalars_mut(&mut cloud.rotations), scalars(&g.rotations), lr.rotation, c1, c2);
        self.log_scales.update(scalars_mut(&mut cloud.log_scales), scalars(&g.log_scales), lr.scale, c1, c2);
        self.opacity_logits.update(
            cloud.opacity_logits.iter_mut(),
            g.opacity_logits.iter().copied(),
            lr.opacity,
            c1,
            c2,
        );
        self.sh_coeffs.update(scalars_mut(&mut cloud.sh_coeffs), scalars(&g.sh_coeffs), lr.feature, c1, c2);
    }

    /// Drops the moments of removed rows.
    pub fn retain(&mut self, keep: &[bool]) {
        self.positions.retain(keep);
        self.rotations.retain(keep);
        self.log_scales.retain(keep);
        self.opacity_logits.retain(keep);
        self.sh_coeffs.retain(keep);
    }

    /// Appends zero moments for `n` new rows.
    pub fn push_zero_rows(&mut self, n: usize) {
        self.positions.push_zero_rows(n);
        self.rotations.push_zero_rows(n);
        self.log_scales.push_zero_rows(n);
        self.opacity_logits.push_zero_rows(n);
        self.sh_coeffs.push_zero_rows(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::Gaussian;
    use nalgebra::{Vector3, Vector4};

    fn cloud(n: usize) -> GaussianCloud {
        GaussianCloud::from_gaussians(
            0,
            (0..n).map(|i| Gaussian {
                position: Vector3::repeat(i as f64),
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                log_scale: Vector3::zeros(),
                opacity_logit: 0.0,
                sh: vec![Vector3::zeros()],
            }),
        )
        .unwrap()
    }

    const LR: LearningRates = LearningRates {
        position: 0.1,
        rotation: 0.1,
        scale: 0.1,
        opacity: 0.1,
        feature: 0.1,
    };

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut c = cloud(2);
        let mut adam = Adam::new(2, 1);
        let mut g = RenderGrads::zeros(2, 1);
        g.positions[0] = Vector3::new(3.0, -0.5, 0.0);
        adam.step(&mut c, &g, &LR);
        // bias-corrected first Adam step is lr·sign(g)
        assert!((c.positions[0] - Vector3::new(-0.1, 0.1, 0.0)).norm() < 1e-12);
        assert_eq!(c.positions[1], Vector3::repeat(1.0));
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters() {
        let mut c = cloud(3);
        let before = c.clone();
        let mut adam = Adam::new(3, 1);
        adam.step(&mut c, &RenderGrads::zeros(3, 1), &LR);
        assert_eq!(c, before);
    }

    #[test]
    fn retain_and_grow_keep_rows_aligned() {
        let mut adam = Adam::new(4, 1);
        for (i, m) in adam.positions.m.iter_mut().enumerate() {
            *m = i as f64;
        }
        adam.retain(&[true, false, true, false]);
        assert_eq!(adam.positions.m, vec![0.0, 1.0, 2.0, 6.0, 7.0, 8.0]);
        adam.push_zero_rows(2);
        assert!(adam.aligned_with(4));
        assert_eq!(&adam.positions.m[6..], &[0.0; 6]);
    }
}
