//! Velocity spread turns timing errors into dephasing. Compares the closed
//! forms with a sampled beam and prints the inequality that keeps the gain.

use cqed_memory::beam::{run_beam, BeamSetup, BeamSpec, Engine, ProtocolKind, VelocityDist};
use cqed_memory::closed_form::{dwell_kick_dispersion, effective_rates_kick, inequality_kick, KickParams};
use cqed_memory::hilbert::{PhysicalParams, StateVector};

fn main() -> cqed_memory::Result<()> {
    let field = StateVector::equal_superposition(3, 0.0).projector();
    println!("{:>6} {:>8} {:>12} {:>10} {:>10}", "dv", "gain", "F_bar [1/s]", "lhs", "F(0.5 s)");
    for dv in [0.0, 0.5, 1.0, 2.0] {
        let mut kp = KickParams::realistic();
        kp.dv = VelocityDist::Uniform.rms(dv);
        let gain = dwell_kick_dispersion(&kp)?.gain;
        let rates = effective_rates_kick(&kp)?;
        let spec = BeamSpec::new(ProtocolKind::Kick, 1000, 1.0)
            .with_dispersion(dv, VelocityDist::Uniform)
            .with_seed(1);
        let run = run_beam(&field, &BeamSetup::new(PhysicalParams::realistic(), spec, ProtocolKind::Kick), Engine::Numeric)?;
        println!(
            "{dv:>6.2} {gain:>8.4} {:>12.4} {:>10.4} {:>10.4}",
            rates.f_bar,
            inequality_kick(&kp).lhs,
            run.points.last().unwrap().fidelity
        );
    }
    Ok(())
}
