use plcsim::cable::CableCatalog;
use plcsim::tlsolver::{channel_response, extract_paths, impulse_response, FrequencyGrid};
use plcsim::topology::Topology;

#[test]
fn branchless_first_arrival_sits_on_the_delay_tap() {
    let catalog = CableCatalog::builtin();
    let grid = FrequencyGrid::default();
    let v = catalog.get("NAYY150").unwrap().phase_velocity();
    let tap = v * grid.sample_period();
    for step in 0..=176 {
        let d = 12.0 + 0.5 * step as f64;
        let topo = Topology::line(d, "NAYY150", 50.0, 50.0);
        let sweep = channel_response(&topo, &catalog, &grid).unwrap();
        let first = extract_paths(&impulse_response(&sweep.response).unwrap())
            .unwrap()
            .paths[0]
            .index;
        assert_eq!(first, (d / tap).round() as usize, "d = {d}");
    }
}
