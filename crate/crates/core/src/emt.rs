//! Time-domain validation oracle for single-transformer energization.
//!
//! Integrates the series circuit source EMF -> R -> L_source -> saturable
//! core with a piecewise-linear magnetizing law by an implicit trapezoidal
//! rule solved exactly segment by segment. Three single-phase units are
//! simulated independently; there is no interphase magnetic coupling.
//!
//! Voltage convention: the source EMF is `v(t) = V sin(wt + theta)` with V
//! the same scalar the analytical estimator divides by the series impedance,
//! and the flux base is `V_nom / w`. That keeps the oracle and the estimator
//! on one per-unit system so their peaks are directly comparable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::CoreError;
use crate::feeder::TransformerSpec;
use crate::ids::Phase;

/// One single-phase energization case.
#[derive(Clone, Debug)]
pub struct EnergizationCase {
    pub spec: TransformerSpec,
    /// EMF amplitude (V).
    pub v_source: f64,
    /// Nominal voltage amplitude (V) defining the 1 pu flux linkage.
    pub v_flux_base: f64,
    /// Thevenin series resistance (ohm), winding resistance excluded.
    pub source_r: f64,
    /// Thevenin series inductance (H).
    pub source_l: f64,
    /// Closing angle referenced to phase A (deg); the unit's phase offset is
    /// applied internally.
    pub theta_deg: f64,
    pub f_hz: f64,
    pub duration_cycles: f64,
    /// Integration step (s).
    pub dt_s: f64,
}

#[derive(Clone, Debug)]
pub struct Waveform {
    pub time_s: Vec<f64>,
    pub current_a: Vec<f64>,
    /// Peak current magnitude within the first two cycles (A).
    pub peak_two_cycle_a: f64,
}

impl EnergizationCase {
    fn validate(&self) -> Result<(), CoreError> {
        if self.duration_cycles < 2.0 {
            return Err(CoreError::Config(format!(
                "energization case: duration {} cycles below the 2-cycle threshold window",
                self.duration_cycles
            )));
        }
        let dt_max = 1.0 / (100.0 * self.f_hz);
        if self.dt_s > dt_max {
            return Err(CoreError::Config(format!(
                "energization case: step {} s too coarse (max {} s at {} Hz)",
                self.dt_s, dt_max, self.f_hz
            )));
        }
        if self.dt_s <= 0.0 || self.v_flux_base <= 0.0 || self.f_hz <= 0.0 {
            return Err(CoreError::Config(
                "energization case: step, flux base, and frequency must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Piecewise-linear magnetizing law: `i(lambda)` with saturation knees at
/// +-lambda_s (physical units, V s).
fn magnetizing_current(lambda: f64, lambda_s_phys: f64, l_m: f64, l_s: f64) -> f64 {
    if lambda.abs() <= lambda_s_phys {
        lambda / l_m
    } else {
        lambda.signum() * (lambda_s_phys / l_m + (lambda.abs() - lambda_s_phys) / l_s)
    }
}

/// Integrates one energization and returns the waveform plus its two-cycle
/// peak magnitude.
pub fn simulate_energization(case: &EnergizationCase) -> Result<Waveform, CoreError> {
    case.validate()?;
    let spec = &case.spec;
    let omega = 2.0 * std::f64::consts::PI * case.f_hz;
    let flux_base = case.v_flux_base / omega;
    let lambda_s_phys = spec.lambda_s * flux_base;
    let r_total = case.source_r + spec.r_w;
    let l_src = case.source_l;
    let (l_m, l_s) = (spec.l_m, spec.l_s);
    let theta = (case.theta_deg + spec.phase.angle_offset_deg()).to_radians();

    let emf = |t: f64| case.v_source * (omega * t + theta).sin();
    let i_of = |lambda: f64| magnetizing_current(lambda, lambda_s_phys, l_m, l_s);

    // State: total flux linkage  lambda_tot = lambda_core + L_src * i(core).
    // Trapezoid gives  g(lc) := lc + (L_src + h R / 2) i(lc) = rhs,
    // a strictly increasing PWL map solved exactly on its segment.
    let kappa = |h: f64| l_src + 0.5 * h * r_total;
    let g = |lc: f64, h: f64| lc + kappa(h) * i_of(lc);
    let invert = |rhs: f64, h: f64| -> Result<f64, CoreError> {
        let k = kappa(h);
        let g_pos = g(lambda_s_phys, h);
        let g_neg = g(-lambda_s_phys, h);
        let lc = if rhs > g_pos {
            // Positive saturated segment: slope 1 + k/l_s.
            lambda_s_phys + (rhs - g_pos) / (1.0 + k / l_s)
        } else if rhs < g_neg {
            -lambda_s_phys + (rhs - g_neg) / (1.0 + k / l_s)
        } else {
            rhs / (1.0 + k / l_m)
        };
        if !lc.is_finite() {
            return Err(CoreError::Internal(format!(
                "non-convergent integration step: flux {lc}"
            )));
        }
        Ok(lc)
    };

    let n_steps = (case.duration_cycles / (case.f_hz * case.dt_s)).round() as usize;
    let two_cycle_t = 2.0 / case.f_hz;
    let h = case.dt_s;

    let mut lambda_core = spec.lambda_0 * flux_base;
    let mut i = i_of(lambda_core);
    let mut time_s = Vec::with_capacity(n_steps + 1);
    let mut current_a = Vec::with_capacity(n_steps + 1);
    time_s.push(0.0);
    current_a.push(i);
    let mut peak = i.abs();

    for n in 0..n_steps {
        let t0 = n as f64 * h;
        let t1 = t0 + h;
        let lambda_tot = lambda_core + l_src * i;
        let rhs = lambda_tot + 0.5 * h * (emf(t0) + emf(t1)) - 0.5 * h * r_total * i;
        lambda_core = invert(rhs, h)?;
        i = i_of(lambda_core);
        time_s.push(t1);
        current_a.push(i);
        if t1 <= two_cycle_t + 1e-12 {
            peak = peak.max(i.abs());
        }
    }

    Ok(Waveform {
        time_s,
        current_a,
        peak_two_cycle_a: peak,
    })
}

/// Simulates a three-unit bank (one single-phase unit per listed spec) at a
/// common phase-A-referenced closing angle. Returns per-unit waveforms in
/// the order given.
pub fn simulate_bank(
    specs: &[TransformerSpec],
    v_source: f64,
    v_flux_base: f64,
    source_r: f64,
    source_l: f64,
    theta_deg: f64,
    f_hz: f64,
    duration_cycles: f64,
    dt_s: f64,
) -> Result<Vec<(Phase, Waveform)>, CoreError> {
    let mut out = Vec::new();
    for spec in specs {
        let case = EnergizationCase {
            spec: spec.clone(),
            v_source,
            v_flux_base,
            source_r,
            source_l,
            theta_deg,
            f_hz,
            duration_cycles,
            dt_s,
        };
        out.push((spec.phase, simulate_energization(&case)?));
    }
    Ok(out)
}

/// Dumps `t,iA,iB,iC` rows; absent phases print empty fields.
pub fn write_waveform_csv(
    path: &Path,
    bank: &[(Phase, Waveform)],
) -> Result<(), CoreError> {
    let mut out = String::from("t_s,i_a_A,i_b_A,i_c_A\n");
    let len = bank.iter().map(|(_, w)| w.time_s.len()).max().unwrap_or(0);
    for n in 0..len {
        let t = bank
            .iter()
            .find_map(|(_, w)| w.time_s.get(n))
            .copied()
            .unwrap_or(0.0);
        let _ = write!(out, "{}", crate::util::fmt_sig(t, 6));
        for p in Phase::ALL {
            match bank.iter().find(|(ph, _)| *ph == p) {
                Some((_, w)) => {
                    let _ = write!(
                        out,
                        ",{}",
                        crate::util::fmt_sig(w.current_a.get(n).copied().unwrap_or(0.0), 6)
                    );
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::BusId;

    fn spec(phase: Phase, lambda_0: f64) -> TransformerSpec {
        let omega = 2.0 * std::f64::consts::PI * 60.0;
        let l_s = 2.88 / omega;
        TransformerSpec {
            bus: BusId(0),
            phase,
            rating_kva: 100.0,
            lambda_n: 1.0,
            lambda_s: 1.2,
            lambda_0,
            l_s,
            l_m: 500.0 * l_s,
            r_w: 0.12,
        }
    }

    fn case(theta: f64, lambda_0: f64) -> EnergizationCase {
        EnergizationCase {
            spec: spec(Phase::A, lambda_0),
            v_source: 2415.0,
            v_flux_base: 2415.0,
            source_r: 0.05,
            source_l: 3.11979 / (2.0 * std::f64::consts::PI * 60.0),
            theta_deg: theta,
            f_hz: 60.0,
            duration_cycles: 4.0,
            dt_s: 1e-4,
        }
    }

    #[test]
    fn symmetric_flux_never_saturates() {
        // Zero residual flux, closing at the voltage peak: flux swings
        // within +-1 pu and the current stays at magnetizing scale.
        let c = case(90.0, 0.0);
        let w = simulate_energization(&c).unwrap();
        let omega = 2.0 * std::f64::consts::PI * 60.0;
        let magnetizing_scale = 2415.0 / (omega * c.spec.l_m);
        assert!(
            w.peak_two_cycle_a < 3.0 * magnetizing_scale,
            "peak {} vs magnetizing {}",
            w.peak_two_cycle_a,
            magnetizing_scale
        );
        // Orders below a saturated peak (hundreds of amperes).
        assert!(w.peak_two_cycle_a < 20.0);
    }

    #[test]
    fn peak_decreases_with_closing_angle() {
        let p0 = simulate_energization(&case(0.0, 0.8)).unwrap().peak_two_cycle_a;
        let p30 = simulate_energization(&case(30.0, 0.8)).unwrap().peak_two_cycle_a;
        let p60 = simulate_energization(&case(60.0, 0.8)).unwrap().peak_two_cycle_a;
        assert!(p0 > p30 && p30 > p60, "{p0} {p30} {p60}");
    }

    #[test]
    fn halving_time_step_moves_peak_under_half_percent() {
        let coarse = simulate_energization(&case(0.0, 0.8)).unwrap().peak_two_cycle_a;
        let mut fine_case = case(0.0, 0.8);
        fine_case.dt_s /= 2.0;
        let fine = simulate_energization(&fine_case).unwrap().peak_two_cycle_a;
        assert!(
            (coarse - fine).abs() / fine < 0.005,
            "coarse {coarse} fine {fine}"
        );
    }

    #[test]
    fn at_ninety_degrees_phase_c_dominates() {
        let specs = [
            spec(Phase::A, 0.8),
            spec(Phase::B, -0.4),
            spec(Phase::C, -0.4),
        ];
        let omega = 2.0 * std::f64::consts::PI * 60.0;
        let bank = simulate_bank(
            &specs,
            2415.0,
            2415.0,
            0.05,
            3.11979 / omega,
            90.0,
            60.0,
            2.0,
            1e-4,
        )
        .unwrap();
        let peak = |p: Phase| {
            bank.iter()
                .find(|(ph, _)| *ph == p)
                .map(|(_, w)| w.peak_two_cycle_a)
                .unwrap()
        };
        assert!(peak(Phase::C) > peak(Phase::A));
        assert!(peak(Phase::C) > peak(Phase::B));
    }

    #[test]
    fn envelope_decays_with_resistance() {
        // Cycle-over-cycle peak magnitudes must not grow.
        let c = case(0.0, 0.8);
        let w = simulate_energization(&c).unwrap();
        let per_cycle = (1.0 / 60.0 / c.dt_s).round() as usize;
        let cycle_peak = |k: usize| {
            w.current_a[k * per_cycle..(k + 1) * per_cycle]
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()))
        };
        let peaks: Vec<f64> = (0..4).map(cycle_peak).collect();
        for pair in peaks.windows(2) {
            assert!(pair[1] <= pair[0] * 1.0001, "{peaks:?}");
        }
    }

    #[test]
    fn validation_rejects_short_runs_and_coarse_steps() {
        let mut c = case(0.0, 0.8);
        c.duration_cycles = 1.0;
        assert!(simulate_energization(&c).is_err());
        let mut c = case(0.0, 0.8);
        c.dt_s = 1e-3;
        assert!(simulate_energization(&c).is_err());
    }
}
