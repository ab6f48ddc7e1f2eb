//! Python bindings for `uwlink_core`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use uwlink_core::channel;
use uwlink_core::frame::{self, Address};
use uwlink_core::modem::{self, ModemConfig};
use uwlink_core::nodes;
use uwlink_core::power::{self, Gating, UnitBudget};
use uwlink_core::sim::Scenario;
use uwlink_core::validation;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_address(s: &str) -> PyResult<Address> {
    s.parse().map_err(value_err)
}

fn modem_config(rate: u32) -> PyResult<ModemConfig> {
    let cfg = ModemConfig::with_rate(rate);
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Decoded frame.
#[pyclass(name = "Frame", frozen, get_all, from_py_object)]
#[derive(Clone)]
struct PyFrame {
    relay_depth: u8,
    address: String,
    payload: Vec<u8>,
}

impl From<&frame::Frame> for PyFrame {
    fn from(f: &frame::Frame) -> Self {
        PyFrame {
            relay_depth: f.relay_depth(),
            address: f.address().to_string(),
            payload: f.payload().to_vec(),
        }
    }
}

#[pymethods]
impl PyFrame {
    #[new]
    fn new(relay_depth: u8, address: &str, payload: Vec<u8>) -> PyResult<Self> {
        let f =
            frame::Frame::new(relay_depth, parse_address(address)?, payload).map_err(value_err)?;
        Ok(PyFrame::from(&f))
    }

    fn encode(&self) -> PyResult<Vec<u8>> {
        encode_frame(self.relay_depth, &self.address, self.payload.clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "Frame(relay_depth={}, address='{}', payload={:?})",
            self.relay_depth, self.address, self.payload
        )
    }

    fn __eq__(&self, other: &PyFrame) -> bool {
        self.relay_depth == other.relay_depth
            && self.address == other.address
            && self.payload == other.payload
    }
}

/// (sum mod 256, xor) over `span`.
#[pyfunction]
fn compute_checks(span: Vec<u8>) -> (u8, u8) {
    frame::compute_checks(&span)
}

#[pyfunction]
fn encode_frame(relay_depth: u8, address: &str, payload: Vec<u8>) -> PyResult<Vec<u8>> {
    let f = frame::Frame::new(relay_depth, parse_address(address)?, payload).map_err(value_err)?;
    Ok(frame::encode_frame(&f))
}

/// Raises ValueError with the error kind and byte offset on failure.
#[pyfunction]
fn decode_frame(data: Vec<u8>) -> PyResult<PyFrame> {
    frame::decode_frame(&data)
        .map(|f| PyFrame::from(&f))
        .map_err(value_err)
}

#[pyfunction]
fn address_matches(frame_address: &str, node_address: &str) -> PyResult<bool> {
    Ok(frame::address_matches(
        &parse_address(frame_address)?,
        &parse_address(node_address)?,
    ))
}

#[pyfunction]
fn to_hex_line(data: Vec<u8>) -> String {
    frame::to_hex_line(&data)
}

#[pyfunction]
#[pyo3(signature = (bits, rate = 115_200))]
fn modulate(bits: Vec<u8>, rate: u32) -> PyResult<Vec<f64>> {
    if bits.iter().any(|&b| b > 1) {
        return Err(PyValueError::new_err("bits must be 0 or 1"));
    }
    Ok(modem::modulate(&bits, &modem_config(rate)?).into_samples())
}

#[pyfunction]
#[pyo3(signature = (samples, n_bits, rate = 115_200))]
fn demodulate(samples: Vec<f64>, n_bits: usize, rate: u32) -> PyResult<Vec<u8>> {
    let cfg = modem_config(rate)?;
    let w = uwlink_core::Waveform::new(samples, cfg.sample_rate_hz()).map_err(value_err)?;
    modem::demodulate(&w, &cfg, n_bits).map_err(value_err)
}

#[pyfunction]
fn theoretical_dpsk_ber(ebn0_db: f64) -> f64 {
    modem::theoretical_dpsk_ber(modem::db_to_linear(ebn0_db))
}

#[pyfunction]
#[pyo3(signature = (ebn0_db, rate = 115_200))]
fn noise_sigma(ebn0_db: f64, rate: u32) -> PyResult<f64> {
    Ok(modem::ebn0_to_noise_sigma(
        modem::db_to_linear(ebn0_db),
        &modem_config(rate)?,
    ))
}

type BerRow = (f64, u64, u64, f64, f64);

/// List of (ebn0_db, bits, errors, measured_ber, theoretical_ber).
#[pyfunction]
#[pyo3(signature = (ebn0_db, n_bits, rate = 115_200, seed = 1))]
fn measure_ber(
    py: Python<'_>,
    ebn0_db: Vec<f64>,
    n_bits: usize,
    rate: u32,
    seed: u64,
) -> PyResult<Vec<BerRow>> {
    let cfg = modem_config(rate)?;
    let points = py.detach(|| modem::measure_ber(&cfg, &ebn0_db, n_bits, seed));
    Ok(points
        .into_iter()
        .map(|p| {
            (
                p.ebn0_db,
                p.bits,
                p.errors,
                p.measured_ber,
                p.theoretical_ber,
            )
        })
        .collect())
}

#[pyfunction]
fn coupling_gain(turns: u32) -> PyResult<f64> {
    channel::coupling_gain(turns).map_err(value_err)
}

/// Standby current in uA with the given unit gating bitmask.
#[pyfunction]
#[pyo3(signature = (gating = Gating::ALL_UNITS.bits()))]
fn standby_current(gating: u8) -> f64 {
    power::standby_current(&UnitBudget::default().with_gating(Gating(gating)))
}

#[pyfunction]
fn encode_temperature(celsius: f64) -> PyResult<(u8, u8)> {
    let r = nodes::encode_temperature(celsius).map_err(value_err)?;
    Ok((r.integer_c, r.decimal_c))
}

#[pyfunction]
fn decode_temperature(integer_c: u8, decimal_c: u8) -> PyResult<f64> {
    nodes::decode_temperature(nodes::SensorReading {
        integer_c,
        decimal_c,
    })
    .map_err(value_err)
}

/// Runs a scenario given as JSON and returns the report as JSON.
#[pyfunction]
fn run_scenario(py: Python<'_>, scenario_json: &str) -> PyResult<String> {
    let sc = Scenario::from_json(scenario_json).map_err(value_err)?;
    let report = py
        .detach(|| uwlink_core::run_scenario(&sc))
        .map_err(value_err)?;
    Ok(report.to_json())
}

/// Built-in scenarios: "single_point_9600", "single_point_115200", "multi_point".
#[pyfunction]
fn builtin_scenario(name: &str) -> PyResult<String> {
    let sc = match name {
        "single_point_9600" => validation::single_point_scenario(9600),
        "single_point_115200" => validation::single_point_scenario(115_200),
        "multi_point" => validation::multi_point_scenario(),
        other => return Err(PyValueError::new_err(format!("unknown scenario {other:?}"))),
    };
    Ok(sc.to_json())
}

#[pymodule]
fn uwlink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_function(wrap_pyfunction!(compute_checks, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(address_matches, m)?)?;
    m.add_function(wrap_pyfunction!(to_hex_line, m)?)?;
    m.add_function(wrap_pyfunction!(modulate, m)?)?;
    m.add_function(wrap_pyfunction!(demodulate, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_dpsk_ber, m)?)?;
    m.add_function(wrap_pyfunction!(noise_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(measure_ber, m)?)?;
    m.add_function(wrap_pyfunction!(coupling_gain, m)?)?;
    m.add_function(wrap_pyfunction!(standby_current, m)?)?;
    m.add_function(wrap_pyfunction!(encode_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(decode_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_scenario, m)?)?;
    Ok(())
}
