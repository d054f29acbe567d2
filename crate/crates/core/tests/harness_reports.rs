use std::path::Path;

use amfd_core::harness::{
    bs_put_problem, emit_partial, partial_path, read_report_json, read_rows_csv, ConvergenceRow, LocalisationRow,
};
use amfd_core::{
    build_1d, convergence_study, emit_report, localisation_study, ConvergenceReport, ConvergenceSpec,
    LocalisationReport, LocalisationSpec, MarketModel, PayoffSpec, ReferenceSpec, ReportFormat, SolveConfig,
    StudyProblem,
};

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema").join(name);
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&value).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, path: &Path) {
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

fn coarse_problem() -> StudyProblem {
    let base = SolveConfig::new(0.05, 0.1, 1.5, 1.0, 1.0, vec![0.0]);
    bs_put_problem(100.0, 100.0, 0.05, 0.2, 1.0, base).unwrap()
}

fn coarse_convergence() -> ConvergenceReport {
    let spec = ConvergenceSpec { tau0: 0.1, h0: 0.2, levels: 3, r2: 0.5, reference: ReferenceSpec::FinestGrid };
    convergence_study(&coarse_problem(), &spec).unwrap()
}

fn coarse_localisation() -> LocalisationReport {
    let spec = LocalisationSpec { r_values: vec![1.0, 1.25, 1.5, 1.75], r1: 0.75, r2: 0.3, r1_values: vec![0.5] };
    localisation_study(&coarse_problem(), &spec).unwrap()
}

#[test]
fn convergence_report_round_trips_bit_exactly() {
    let report = coarse_convergence();
    assert!(report.complete && report.error.is_none());
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.reference.kind, "finest-grid");

    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("c.json");
    emit_report(&report, &json, ReportFormat::Json).unwrap();
    assert!(!partial_path(&json).exists());
    let back: ConvergenceReport = read_report_json(&json).unwrap();
    assert_eq!(back, report);
    for (a, b) in back.rows.iter().zip(&report.rows) {
        assert_eq!(a.error.to_bits(), b.error.to_bits());
    }
    assert_valid(&schema("convergence-report.schema.json"), &json);

    let csv = dir.path().join("c.csv");
    emit_report(&report, &csv, ReportFormat::from_path(&csv)).unwrap();
    let rows: Vec<ConvergenceRow> = read_rows_csv::<ConvergenceReport>(&csv).unwrap();
    assert_eq!(rows, report.rows);
}

#[test]
fn localisation_report_round_trips_and_validates() {
    let report = coarse_localisation();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.r_max, 1.75);
    assert_eq!(report.rows.last().unwrap().sup_diff, 0.0);
    assert_eq!(report.r1_rows.len(), 1);

    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("l.json");
    emit_report(&report, &json, ReportFormat::Json).unwrap();
    assert_eq!(read_report_json::<LocalisationReport>(&json).unwrap(), report);
    assert_valid(&schema("localisation-report.schema.json"), &json);

    let csv = dir.path().join("l.csv");
    emit_report(&report, &csv, ReportFormat::Csv).unwrap();
    let rows: Vec<LocalisationRow> = read_rows_csv::<LocalisationReport>(&csv).unwrap();
    assert_eq!(rows, report.rows);
}

#[test]
fn studies_are_deterministic() {
    let a = serde_json::to_string(&coarse_convergence()).unwrap();
    let b = serde_json::to_string(&coarse_convergence()).unwrap();
    assert_eq!(a, b);
    assert_eq!(coarse_localisation(), coarse_localisation());
}

#[test]
fn empty_report_writes_header_only_csv() {
    let mut report = coarse_convergence();
    report.rows.clear();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    emit_report(&report, &csv, ReportFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "level,tau,h,error,residual,iterations\n");
    assert!(read_rows_csv::<ConvergenceReport>(&csv).unwrap().is_empty());
}

#[test]
fn failed_studies_return_their_partial_report() {
    let problem = coarse_problem();
    let spec = ConvergenceSpec { tau0: 0.1, h0: 0.2, levels: 2, r2: 0.5, reference: ReferenceSpec::FinestGrid };
    let failure = convergence_study(&problem, &spec).unwrap_err();
    assert!(!failure.partial.complete);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let written = emit_partial(&failure.partial, &out, ReportFormat::Json).unwrap();
    assert_eq!(written, partial_path(&out));
    assert!(written.exists() && !out.exists());
    assert_valid(&schema("convergence-report.schema.json"), &written);

    let bad_loc = LocalisationSpec { r_values: vec![1.0, 1.25], r1: 0.75, r2: 0.3, r1_values: vec![] };
    let failure = localisation_study(&problem, &bad_loc).unwrap_err();
    assert!(failure.partial.rows.is_empty() && !failure.partial.complete);
}

#[test]
fn zero_payoff_study_has_no_slope() {
    let market = MarketModel::black_scholes(0.05, 0.2, 1.0).unwrap();
    let model = market.to_log_model();
    let problem = StudyProblem {
        dec: build_1d(&model).unwrap(),
        model,
        payoff: PayoffSpec::zero(1),
        base: SolveConfig::new(0.05, 0.1, 1.5, 1.0, 1.0, vec![0.0]),
        description: "zero payoff".into(),
    };
    let spec = ConvergenceSpec {
        tau0: 0.1,
        h0: 0.2,
        levels: 3,
        r2: 0.5,
        reference: ReferenceSpec::Fixed { description: "zero".into(), points: vec![vec![0.0]], values: vec![0.0] },
    };
    let report = convergence_study(&problem, &spec).unwrap();
    assert!(report.rows.iter().all(|r| r.error == 0.0));
    assert_eq!(report.h_slope, None);
    assert_eq!(report.tau_slope, None);
    assert!(!report.strictly_decreasing);
}
