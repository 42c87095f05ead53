//! Predictions from a saved deep-model checkpoint.

use std::io::Write;
use std::path::Path;

use mfgp::mfdgp::{MfDgpModel, PredictOptions};
use mfgp::num::DenseMatrix;

use crate::CliError;

/// Reads inputs (header `x1,...,xd`) and writes
/// `x1,...,xd,mean,var,var_y` rows, where `var` is the latent variance and
/// `var_y` adds the target fidelity's noise. Inputs live in the space of
/// `input_fidelity`, by default the highest one.
pub fn predict_csv(
    checkpoint: &Path,
    input: &Path,
    fidelity: usize,
    input_fidelity: Option<usize>,
    samples: Option<usize>,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let model = MfDgpModel::load_checkpoint(checkpoint).map_err(|e| match e {
        mfgp::Error::Io(m) => CliError::Config(format!("{}: {m}", checkpoint.display())),
        e => CliError::Schema(e.to_string()),
    })?;
    let input_fidelity = input_fidelity.unwrap_or(model.num_fidelities());
    let d = model.input_dim(input_fidelity).map_err(|e| CliError::Config(e.to_string()))?;

    let mut rdr = csv::Reader::from_path(input).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let expected: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    if header != expected {
        return Err(CliError::Schema(format!("{}: header must be `{}`", input.display(), expected.join(","))));
    }
    let mut flat = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        for f in rec?.iter() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| CliError::Schema(format!("line {}: `{f}` is not a number", k + 2)))?;
            flat.push(v);
        }
    }
    let x = DenseMatrix::from_row_slice(flat.len() / d, d, &flat);
    let opts = PredictOptions {
        samples: samples.unwrap_or(model.config.predict_samples),
        seed,
        zero_noise: false,
    };
    let pred = model.predict(&x, input_fidelity, fidelity, &opts)?;
    let noise = model.scaling.unscale_var(model.fidelities[fidelity - 1].noise);

    let mut w = csv::Writer::from_writer(out);
    let mut head = expected;
    head.extend(["mean", "var", "var_y"].map(String::from));
    w.write_record(&head)?;
    for i in 0..x.nrows() {
        let mut rec: Vec<String> = (0..d).map(|j| x[(i, j)].to_string()).collect();
        rec.push(pred.mean[i].to_string());
        rec.push(pred.var[i].to_string());
        rec.push((pred.var[i] + noise).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
