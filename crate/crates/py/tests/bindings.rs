use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "safe_cbf_lab").unwrap();
        safe_cbf_lab_py::register(&m).unwrap();
        let g = PyDict::new(py);
        g.set_item("lab", m).unwrap();
        g.set_item("config_dir", concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
            .unwrap();
        f(py, &g);
    });
}

fn run(py: Python<'_>, g: &Bound<'_, PyDict>, code: &str) {
    let code = std::ffi::CString::new(code).unwrap();
    if let Err(e) = py.run(&code, Some(g), None) {
        panic!("{e}");
    }
}

#[test]
fn dataset_round_trip() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
ds = lab.Dataset([1.0, 0.5], [[1.0, 1.0], [1.0, 1.0]], 0.01, 2)
mu0, var0 = ds.predict([0.0, 0.0], [1.0])
assert mu0 == 0.0 and var0 > 0.0
ds.add([0.0, 0.0], [1.0], 0.3)
mu, var = ds.predict([0.0, 0.0], [1.0])
assert var < var0 and abs(mu - 0.3) < 0.05
back = lab.Dataset.from_json(ds.to_json())
assert len(back) == 1 and back.predict([0.0, 0.0], [1.0]) == (mu, var)
"#,
        );
    });
}

#[test]
fn constraint_classify_and_filter() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
cd = lab.ConstraintData(-1.0, [1.0], [[0.01, 0.0], [0.0, 0.01]], 0.0, 2.0)
rep = cd.classify()
assert rep["feasible"] and rep["lambda_dagger"] < 0.0
u = cd.filter([0.0])
assert cd.margin(u) >= -1e-8 and u[0] > 0.0
assert cd.filter([5.0]) == [5.0]
"#,
        );
    });
}

#[test]
fn experiment_runs_a_short_episode() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
exp = lab.Experiment(config_dir + "/acc.toml")
ep = exp.run("alg1", seed=0, t_max=0.5)
assert ep.completed and len(ep) == 50
m = ep.metrics()
assert m["variant"] == "alg1" and m["final_N"] == len(ep.final_dataset())
assert exp.lambda_dagger(exp.x0) < 0.0
assert ep.trace_csv().count("\n") == len(ep) + 1
try:
    exp.run("nope")
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#,
        );
    });
}

#[test]
fn verify_suite_passes() {
    with_module(|py, g| {
        run(
            py,
            g,
            "r = lab.verify('gp', 10, 0)\nassert r['passed'] and r['instances'] == 10\n",
        );
    });
}
