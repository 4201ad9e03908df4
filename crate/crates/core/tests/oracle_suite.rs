//! The equivalence checker on schedules other than unit steps, and its
//! ability to catch a faulty step.

use gossiplearn::centralized::StepSchedule;
use gossiplearn::distributed::{gossip_step, NetworkState};
use gossiplearn::model::{ObservationModel, SignalProfile};
use gossiplearn::network::GossipEvent;
use gossiplearn::oracle::{check_instance, check_instance_with, OracleInstance, ORACLE_TOL};
use gossiplearn::simplex::{proximal_projection, Belief};
use gossiplearn::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn decreasing_schedule_still_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let mut inst = OracleInstance::random(&mut rng, 5, 4);
        inst.schedule =
            StepSchedule::sequence((1..=40).map(|t| 1.0 / (t as f64).sqrt()).collect()).unwrap();
        let report = check_instance(&inst, 40, &mut rng).unwrap();
        assert!(report.passes(ORACLE_TOL), "{report:?}");
    }
}

fn stale_belief_step(
    s: &NetworkState,
    e: Option<&GossipEvent>,
    p: &SignalProfile,
    model: &ObservationModel,
    sch: &StepSchedule,
    priors: &[Belief],
) -> Result<NetworkState> {
    // Projects with the step size of the next slot instead of this one.
    let mut next = gossip_step(s, e, p, model, sch, priors)?;
    for (agent, prior) in next.agents.iter_mut().zip(priors) {
        agent.belief = proximal_projection(&agent.z, 1.5 * sch.alpha(s.slot), prior)?;
    }
    Ok(next)
}

#[test]
fn faulty_projection_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = OracleInstance::random(&mut rng, 4, 4);
    let report = check_instance_with(&inst, 10, &mut rng, &stale_belief_step).unwrap();
    assert!(!report.passes(ORACLE_TOL));
    assert!(report.recursion_vs_closed_form > ORACLE_TOL);
    assert!(report.recursion_vs_matrix > ORACLE_TOL);
}
