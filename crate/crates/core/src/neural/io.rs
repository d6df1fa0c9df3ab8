//! JSON model files.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, CertNet, Clamp, Coupling, Dense, NeuralError, Role};

pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    role: Role,
    n: usize,
    m: usize,
    coupling: CouplingFile,
    activation: Activation,
    layers: Vec<LayerFile>,
    #[serde(default)]
    clamp: Option<Clamp>,
}

#[derive(Serialize, Deserialize)]
struct CouplingFile {
    kind: String,
    #[serde(default)]
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

/// serde_json writes the shortest representation that parses back to the
/// same `f64`, so the round trip is bit-exact.
pub fn save_model(net: &CertNet) -> String {
    let (kind, coeffs) = match &net.coupling {
        Coupling::Product => ("product", vec![]),
        Coupling::Exponential { coeffs } => ("exponential", coeffs.clone()),
    };
    let file = ModelFile {
        version: MODEL_VERSION,
        role: net.role,
        n: net.n,
        m: net.output_dim(),
        coupling: CouplingFile {
            kind: kind.into(),
            coeffs,
        },
        activation: net.activation,
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                w: l.w.iter().copied().collect(),
                b: l.b.to_vec(),
            })
            .collect(),
        clamp: net.clamp.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn load_model(text: &str) -> Result<CertNet, NeuralError> {
    // Version is checked before the full schema so old files get a clear error.
    let probe: serde_json::Value = serde_json::from_str(text)?;
    let version = probe
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| NeuralError::Invalid("missing version field".into()))?;
    if version != u64::from(MODEL_VERSION) {
        return Err(NeuralError::Version {
            expected: MODEL_VERSION,
            found: version as u32,
        });
    }
    let file: ModelFile = serde_json::from_value(probe)?;
    let coupling = match file.coupling.kind.as_str() {
        "product" => Coupling::Product,
        "exponential" => Coupling::Exponential {
            coeffs: file.coupling.coeffs,
        },
        other => return Err(NeuralError::Invalid(format!("unknown coupling kind {other:?}"))),
    };
    if let Coupling::Exponential { coeffs } = &coupling {
        if coeffs.len() != file.n {
            return Err(NeuralError::Invalid(format!(
                "exponential coupling needs {} coefficients, got {}",
                file.n,
                coeffs.len()
            )));
        }
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        if l.w.len() != l.rows * l.cols {
            return Err(NeuralError::BrokenChain {
                layer: i,
                reason: format!("{} weights for a {}x{} matrix", l.w.len(), l.rows, l.cols),
            });
        }
        let w = Array2::from_shape_vec((l.rows, l.cols), l.w).expect("length checked");
        layers.push(Dense {
            w,
            b: Array1::from(l.b),
        });
    }
    let net = CertNet {
        role: file.role,
        n: file.n,
        coupling,
        activation: file.activation,
        layers,
        clamp: file.clamp,
    };
    net.validate()?;
    if net.output_dim() != file.m {
        return Err(NeuralError::BrokenChain {
            layer: net.layers.len() - 1,
            reason: format!("output width {} differs from declared m = {}", net.output_dim(), file.m),
        });
    }
    Ok(net)
}
