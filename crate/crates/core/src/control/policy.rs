use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::system::TargetSet;
use super::value::BackupController;
use crate::net::NetRef;

/// `pi_theta(x) = pi_safe(x)` inside the target set and
/// `clip(pi_safe(x) + phi_theta(s * x) - anchor)` elsewhere, with `s` the
/// input scaling.
///
/// When anchored, `anchor = phi_theta(0)` so the origin stays an equilibrium
/// of the closed loop; otherwise it is zero.
#[derive(Debug, Clone)]
pub struct ResidualPolicy<'a> {
    pub backup: &'a BackupController,
    pub net: NetRef<'a>,
    pub input_scale: &'a [f64],
    pub target: &'a TargetSet,
    pub anchor: Vec<f64>,
}

/// Action together with the derivative of each clipped output with respect
/// to the residual (1 when unsaturated, 0 otherwise or inside the target).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionWithSlope {
    pub u: Vec<f64>,
    pub slope: Vec<f64>,
}

impl<'a> ResidualPolicy<'a> {
    pub fn new(
        backup: &'a BackupController,
        net: NetRef<'a>,
        input_scale: &'a [f64],
        target: &'a TargetSet,
        anchored: bool,
    ) -> Self {
        let anchor = if anchored {
            net.forward_unchecked(&vec![0.0; input_scale.len()])
        } else {
            vec![0.0; backup.input_lo.len()]
        };
        Self {
            backup,
            net,
            input_scale,
            target,
            anchor,
        }
    }

    pub fn scaled_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.input_scale).map(|(v, s)| v * s).collect()
    }

    pub fn act(&self, x: &[f64]) -> Vec<f64> {
        self.act_with_slope(x).u
    }

    pub fn act_with_slope(&self, x: &[f64]) -> ActionWithSlope {
        let base = self.backup.act(x);
        if self.target.contains(x) {
            let n = base.len();
            return ActionWithSlope {
                u: base,
                slope: vec![0.0; n],
            };
        }
        let phi = self.net.forward_unchecked(&self.scaled_input(x));
        let mut u = Vec::with_capacity(base.len());
        let mut slope = Vec::with_capacity(base.len());
        for (i, (b, p)) in base.iter().zip(&phi).enumerate() {
            let v = b + p - self.anchor[i];
            let (lo, hi) = (self.backup.input_lo[i], self.backup.input_hi[i]);
            u.push(v.clamp(lo, hi));
            slope.push(if lo < v && v < hi { 1.0 } else { 0.0 });
        }
        ActionWithSlope { u, slope }
    }
}

/// Aggressive linear feedback `clip(-gain * sum(x) + delta)` with Gaussian
/// `delta` of standard deviation `noise_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPolicy {
    pub gain: f64,
    pub noise_std: f64,
    pub input_lo: f64,
    pub input_hi: f64,
}

impl ExpertPolicy {
    pub fn act_with_noise(&self, x: &[f64], delta: f64) -> f64 {
        (-self.gain * x.iter().sum::<f64>() + delta).clamp(self.input_lo, self.input_hi)
    }

    pub fn act<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let delta = if self.noise_std > 0.0 {
            Normal::new(0.0, self.noise_std).expect("finite std").sample(rng)
        } else {
            0.0
        };
        self.act_with_noise(x, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{BackupModel, LinearSystem, StageCost, VALUE_HORIZON};
    use crate::net::{NetSpec, PolicyNet};
    use crate::params::ParamVector;
    use rand::SeedableRng;

    #[test]
    fn expert_label_saturates() {
        let e = ExpertPolicy {
            gain: 2.0,
            noise_std: 0.4,
            input_lo: -1.0,
            input_hi: 1.0,
        };
        assert_eq!(e.act_with_noise(&[1.0, 1.0], 0.0), -1.0);
        assert_eq!(e.act_with_noise(&[0.1, 0.0], 0.0), -0.2);
    }

    #[test]
    fn zero_residual_reproduces_backup_and_switches_in_target() {
        let model = BackupModel::new(
            LinearSystem::double_integrator(0.1, 15.0, 1.0).unwrap(),
            StageCost::identity(2, 1),
            TargetSet::ball(0.01),
            VALUE_HORIZON,
        )
        .unwrap();
        let spec = NetSpec::new(2, 1, 8, 2);
        let net = PolicyNet::init_zero_residual(spec.clone()).unwrap();
        let scale = [1.0 / 15.0; 2];
        let pol = ResidualPolicy::new(&model.backup, net.view(), &scale, &model.target, false);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let x = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)];
            assert_eq!(pol.act(&x), model.backup.act(&x));
        }
        // a large residual is ignored inside the target
        let mut p = net.params().clone();
        let out = spec.output_layer_range();
        p.as_mut_slice()[out.end - 1] = 0.3;
        let shifted = PolicyNet::from_params(spec, ParamVector::from(p.into_vec())).unwrap();
        let pol = ResidualPolicy::new(&model.backup, shifted.view(), &scale, &model.target, false);
        assert_eq!(pol.act(&[0.001, 0.0]), model.backup.act(&[0.001, 0.0]));
        let a = pol.act_with_slope(&[1.0, 0.0]);
        assert!((a.u[0] - (model.backup.act(&[1.0, 0.0])[0] + 0.3)).abs() < 1e-15);
        assert_eq!(a.slope, vec![1.0]);
        assert_eq!(pol.act_with_slope(&[-14.0, -14.0]).slope, vec![0.0]);

        // anchoring removes the constant bias, so the origin is an equilibrium
        let anchored = ResidualPolicy::new(&model.backup, shifted.view(), &scale, &model.target, true);
        assert_eq!(anchored.anchor, vec![0.3]);
        assert_eq!(anchored.act(&[1.0, 0.0]), model.backup.act(&[1.0, 0.0]));
    }
}
