//! Dispersive protocol: the hold τ = 6π/Ω undoes the resonant phase, and the
//! photon lifetime grows by up to 700%.

use std::f64::consts::PI;

use cqed_memory::beam::{build_schedule, AtomInstance, ProtocolKind};
use cqed_memory::closed_form::{dwell_dispersive, gain_dispersive, DispersiveParams};
use cqed_memory::hilbert::PhysicalParams;

fn main() -> cqed_memory::Result<()> {
    let p = PhysicalParams::realistic();
    println!("hold tau = {:.3e} s = {:.1} pi/Omega", p.dispersive_hold()?, p.dispersive_hold()? * p.rabi / PI);
    let sched = build_schedule(&AtomInstance::nominal(), &p, ProtocolKind::Dispersive, 0.0)?;
    for seg in &sched.segments {
        println!("  {seg:?}");
    }

    let mut dp = DispersiveParams::realistic();
    println!("\n{:>6} {:>10} {:>10} {:>8}", "lambda", "Tr_p [s]", "Tr_c [s]", "gain");
    for lambda in [0.1, 0.5, 0.9, 1.0] {
        dp.lambda = lambda;
        let d = dwell_dispersive(&dp)?;
        println!("{lambda:>6.2} {:>10.4} {:>10.4} {:>8.3}", d.tr_p, d.tr_c, gain_dispersive(&dp)?);
    }
    Ok(())
}
