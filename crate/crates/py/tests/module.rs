use std::sync::Once;

use econosim_py::econosim_py;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn python() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(econosim_py);
        Python::initialize();
    });
}

fn eval<'py>(py: Python<'py>, code: &str) -> PyResult<Bound<'py, PyAny>> {
    let globals = PyDict::new(py);
    globals.set_item("econosim", py.import("econosim")?)?;
    let code = std::ffi::CString::new(code).unwrap();
    py.eval(&code, Some(&globals), None)
}

#[test]
fn critical_point_from_python() {
    python();
    Python::attach(|py| {
        let omega: f64 = eval(py, "econosim.critical_point(3.0, 1.0).omega")
            .unwrap()
            .extract()
            .unwrap();
        assert!((omega - 1.012161).abs() < 1e-6);
    });
}

#[test]
fn run_is_deterministic_from_python() {
    python();
    Python::attach(|py| {
        let same: bool = eval(
            py,
            "(lambda c: econosim.run(c).u_total == econosim.run(c).u_total)\
             (econosim.SimConfig(n=100, steps=1500, warmup=500, c_th=-0.45, seed=3))",
        )
        .unwrap()
        .extract()
        .unwrap();
        assert!(same);
    });
}

#[test]
fn errors_map_to_python_exceptions() {
    python();
    Python::attach(|py| {
        let bad_price = eval(py, "econosim.crisis_tail([1.0, 0.0, 2.0])").unwrap_err();
        assert!(bad_price.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let thin = eval(py, "econosim.fit_tail([1.0, 2.0, 3.0])").unwrap_err();
        assert!(thin.is_instance_of::<pyo3::exceptions::PyRuntimeError>(py));
        let floor = eval(py, "econosim.SimConfig(c_th=0.2).validate()").unwrap_err();
        assert!(floor.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
