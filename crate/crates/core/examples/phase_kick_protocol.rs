//! Kick protocol: closed-form dwell times against λ, then one simulated beam.

use cqed_memory::beam::{run_beam, BeamSetup, BeamSpec, Engine, ProtocolKind};
use cqed_memory::closed_form::{dwell_kick, KickParams};
use cqed_memory::hilbert::{PhysicalParams, StateVector};

fn main() -> cqed_memory::Result<()> {
    let mut kp = KickParams::realistic();
    println!("{:>6} {:>10} {:>10} {:>8}", "lambda", "Tr_p [s]", "Tr_c [s]", "gain");
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        kp.lambda = lambda;
        let d = dwell_kick(&kp)?;
        println!("{lambda:>6.2} {:>10.5} {:>10.5} {:>8.4}", d.tr_p, d.tr_c, d.gain);
    }

    let setup = BeamSetup::new(
        PhysicalParams::realistic(),
        BeamSpec::new(ProtocolKind::Kick, 2000, 1.0),
        ProtocolKind::Kick,
    );
    let run = run_beam(&StateVector::equal_superposition(3, 0.0).projector(), &setup, Engine::Numeric)?;
    let last = run.points.last().unwrap();
    println!(
        "\n{} atoms over {:.4} s: rho11 {:.4}, |rho10| {:.4}, fidelity {:.4}",
        run.atoms_present, last.t, last.rho11, last.coherence, last.fidelity
    );
    Ok(())
}
