use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::attach(|py| {
        let module = PyModule::new(py, "volstop_py").unwrap();
        volstop_py::register(&module).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("vs", module).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.display(py);
            panic!("python check failed");
        }
    });
}

#[test]
fn one_state_threshold_is_within_one_percent() {
    run(r#"
p = vs.Problem(vs.ChainModel([0.2], [[0.0]]), rate=0.05, strike=1.0)
b = p.solve().thresholds()["levels"][0]
exact = 2 * 0.05 / (2 * 0.05 + 0.2 ** 2)
assert abs(b - exact) / exact < 0.01, (b, exact)
"#);
}

#[test]
fn ordering_search_counts() {
    run(r#"
m = vs.ChainModel([0.15, 0.3, 0.5], [[-0.5, 0.5, 0.0], [0.7, -1.2, 0.5], [0.0, 1.0, -1.0]])
p = vs.Problem(m, rate=0.05, strike=1.0)
assert p.threshold_search("monotone", grid_points=600)["orderings_examined"] == 1
assert p.threshold_search("exhaustive", grid_points=600)["orderings_examined"] == 6
"#);
}

#[test]
fn errors_become_python_exceptions() {
    run(r#"
try:
    vs.ChainModel([0.1, 0.2], [[-1.0, 0.5], [1.0, -1.0]])
    raise AssertionError("accepted a bad generator")
except vs.VolstopError as e:
    assert "generator" in str(e)
try:
    vs.Problem(vs.ChainModel([0.2], [[0.0]]), rate=0.05, strike=1.0, value=1.0)
    raise AssertionError("accepted two gains")
except vs.VolstopError:
    pass
m = vs.ChainModel([0.15, 0.3, 0.5], [[-1.0, 0.5, 0.5], [0.7, -1.2, 0.5], [0.0, 1.0, -1.0]])
try:
    m.simulate_coupled(0, 2, 1.0)
    raise AssertionError("coupled a non-skip-free chain")
except vs.VolstopError:
    pass
m = vs.ChainModel([0.15, 0.3, 0.5], [[-0.5, 0.5, 0.0], [0.7, -1.2, 0.5], [0.0, 1.0, -1.0]])
try:
    vs.Problem(m, rate=0.05, strike=1.0).solve(max_iters=1)
    raise AssertionError("converged in one iteration")
except vs.NoConvergenceError:
    pass
"#);
}

#[test]
fn validity_report_round_trips_as_dict() {
    run(r#"
r = vs.DiffusionModel.hull_white(0.2, 0.08).validate()
assert r["status"] == "valid" and abs(r["phi"] - 2.0) < 1e-12, r
assert vs.DiffusionModel.heston(0.5, 0.1, 0.1).validate()["status"] == "invalid"
"#);
}
