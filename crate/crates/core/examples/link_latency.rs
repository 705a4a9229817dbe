//! Round-trip timelines for the three exchange topologies with eight robots,
//! using the default link settings and real payload sizes.

use std::collections::BTreeMap;

use lsai::comms::{payload_size, round_trip_model_exchange, CommsConfig, Payload, Topology, Transfer};
use lsai::model::{topology, DEFAULT_HIDDEN};
use lsai::policy::{ACTION_DIM, OBS_DIM};

fn main() -> lsai::Result<()> {
    let shapes = topology(OBS_DIM, &DEFAULT_HIDDEN, ACTION_DIM)?;
    let model = payload_size(Payload::Model(&shapes));
    let fused =
        payload_size(Payload::SubModelWithBranch { model: &shapes, branch: lsai::model::LayerShape::new(64, 64)? });
    let obs = payload_size(Payload::Observations(30));
    let plan = payload_size(Payload::ActionSchedule(60));
    println!("payloads: model={model} sub+branch={fused} observations(30)={obs} schedule(60)={plan}");

    let comms = CommsConfig::default();
    let n = 8u32;
    let transfers = |up, down| -> Vec<Transfer> {
        (0..n)
            .map(|i| Transfer { robot: i, up_bytes: up, down_bytes: down, ready_at: 0.1 * i as f64, reachable: true })
            .collect()
    };
    let ring: BTreeMap<u32, Vec<u32>> = (0..n).map(|i| (i, vec![(i + 1) % n, (i + n - 1) % n])).collect();
    let cases = [
        ("edge", Topology::EdgeLsai { edge: 0 }, transfers(model, fused), 4.0),
        ("cloud", Topology::Centralized, transfers(obs, plan), 1.0),
        ("peer ring", Topology::Distributed { neighbors: ring }, transfers(model, 0), 0.0),
    ];
    for (name, topo, tr, compute) in cases {
        let ex = round_trip_model_exchange(&topo, &comms, &tr, compute)?;
        let last = ex.completion.values().cloned().fold(0.0, f64::max);
        println!(
            "{name:>9}: packets={:>3} bytes={:>8} uploads_done={:.3}s last_completion={last:.3}s",
            ex.packets.len(),
            ex.total_bytes,
            ex.uploads_done
        );
    }
    Ok(())
}
