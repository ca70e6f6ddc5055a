//! Ensemble over beam realizations with a partially filled beam. The fitted
//! coherence rate is compared with the closed-form 1/Tr^c.

use cqed_memory::beam::{monte_carlo_ensemble, BeamSetup, BeamSpec, Engine, ProtocolKind};
use cqed_memory::closed_form::{dwell_kick, KickParams};
use cqed_memory::hilbert::{PhysicalParams, StateVector};

fn main() -> cqed_memory::Result<()> {
    let lambda = 0.5;
    let setup = BeamSetup::new(
        PhysicalParams::realistic(),
        BeamSpec::new(ProtocolKind::Kick, 2000, lambda).with_seed(42),
        ProtocolKind::Kick,
    );
    let ens = monte_carlo_ensemble(&StateVector::equal_superposition(3, 0.0).projector(), &setup, Engine::Numeric, 200)?;
    for k in (0..ens.times.len()).step_by(400) {
        println!(
            "t {:.4} s  rho11 {:.5} +- {:.1e}  |rho10| {:.5} +- {:.1e}",
            ens.times[k], ens.rho11_mean[k], ens.rho11_se[k], ens.coherence_mean[k], ens.coherence_se[k]
        );
    }
    let mut kp = KickParams::realistic();
    kp.lambda = lambda;
    let fit = ens.coherence_fit.unwrap();
    println!(
        "coherence rate {:.4} +- {:.1e} /s, closed form {:.4} /s",
        fit.rate,
        fit.rate_stderr,
        1.0 / dwell_kick(&kp)?.tr_c
    );
    Ok(())
}
