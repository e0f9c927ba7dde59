//! Regenerate the bundled synthetic fixture (`fixtures/synthetic.csv` and
//! `fixtures/config.json`). Deterministic: rerunning reproduces the committed
//! bytes exactly.
//!
//! ```text
//! cargo run -p betaimpute-cli --example gen_fixture
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use betaimpute::synthetic::{synthetic_dataset, synthetic_labels};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::create_dir_all(&dir).expect("create fixtures dir");

    // 120 rows, 6 features from 2 latent factors, binary outcome driven by
    // columns g0 and g3.
    let data = synthetic_dataset(120, 6, 2, 0.5, 13).expect("generate features");
    let (labels, truth) = synthetic_labels(&data, 2, 14).expect("generate labels");
    assert_eq!(truth, vec!["g0".to_string(), "g3".to_string()]);

    let raw = data.to_original_units();
    let mut csv = data.column_names.join(",");
    csv.push_str(",y\n");
    for i in 0..data.n_rows() {
        for j in 0..data.n_cols() {
            write!(csv, "{},", raw[(i, j)]).unwrap();
        }
        writeln!(csv, "{}", labels[i]).unwrap();
    }
    let csv_path = dir.join("synthetic.csv");
    fs::write(&csv_path, csv).expect("write csv");

    let config = serde_json::json!({
        "input": "crates/cli/fixtures/synthetic.csv",
        "out": "out/fixture-run",
        "seed": 7,
        "mask": { "row_fraction": 0.2, "cell_fraction": 0.2 },
        "model": { "hidden": [12], "latent_dim": 2 },
        "train": {
            "epochs": 80,
            "batch_size": 32,
            "learning_rate": 3e-3,
            "loss_on_masked": false
        },
        "sampler": { "method": "sir", "iterations": 400, "burn_in": 0, "m_draws": 40 },
        "cv": {
            "k": 2,
            "row_fraction": 0.2,
            "cell_fraction": 0.1,
            "beta_grid": [1.0, 2.0],
            "epoch_grid": [40, 80],
            "coverage_target": 0.95,
            "coverage_band": 0.05
        },
        "downstream": {
            "label_column": "y",
            "lambda": 0.05,
            "p_incl_threshold": 0.5,
            "truth_genes": ["g0", "g3"]
        }
    });
    let config_path = dir.join("config.json");
    fs::write(
        &config_path,
        serde_json::to_string_pretty(&config).unwrap() + "\n",
    )
    .expect("write config");

    println!("wrote {}", csv_path.display());
    println!("wrote {}", config_path.display());
}
