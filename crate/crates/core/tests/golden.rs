//! Rendering of stored reports must not drift. Set `UPDATE_GOLDEN=1` to
//! rewrite the expected markdown after an intentional format change.

use std::fs;
use std::path::PathBuf;

use counterfair_core::io::{from_json, render_markdown, render_plots, to_json};
use counterfair_core::pipeline::AuditReport;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn check(stem: &str) {
    let text = fs::read_to_string(golden(&format!("{stem}.json"))).unwrap();
    let report: AuditReport = from_json(&text).unwrap();

    // The JSON form survives a round trip, infinities included.
    let again: AuditReport = from_json(&to_json(&report).unwrap()).unwrap();
    let a: serde_json::Value = serde_json::from_str(&to_json(&report).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&to_json(&again).unwrap()).unwrap();
    assert_eq!(a, b);

    let md = render_markdown(&report).unwrap();
    let path = golden(&format!("{stem}.md"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, &md).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap();
    assert!(md == expected, "{stem}.md differs:\n{md}");

    let plots = render_plots(&report);
    assert!(plots.iter().any(|p| p.name == "sweeps.csv"));
}

#[test]
fn full_audit_report_renders_unchanged() {
    check("audit");
}

#[test]
fn blackbox_report_renders_unchanged() {
    check("blackbox");
}

#[test]
fn blackbox_golden_has_infinite_ratio() {
    let text = fs::read_to_string(golden("blackbox.json")).unwrap();
    assert!(text.contains("\"inf\""));
}
