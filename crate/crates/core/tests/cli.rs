use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_plate-dpg");

#[test]
fn study_writes_csv_with_header_and_rates() {
    let dir = std::env::temp_dir().join(format!("plate-dpg-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("results.csv");
    let status = Command::new(BIN)
        .args(["study", "--t-list", "1e-2,1e-6", "--levels", "2", "--solver", "direct", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "level,t,ndof,err_u,err_M,err_theta,eta,rate_u,rate_M,rate_theta");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].ends_with(",,,"));
    assert_eq!(lines[2].split(',').count(), 10);
    assert!(lines[2].split(',').all(|f| !f.is_empty()));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn limit_subcommand_passes_on_coarse_mesh() {
    let out = Command::new(BIN).args(["limit", "--level", "2"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("PASS limit"));
}

#[test]
fn mesh_dump_lists_vertices_and_triangles() {
    let out = Command::new(BIN).args(["mesh", "--level", "1"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 13);
    assert_eq!(text.lines().filter(|l| l.starts_with("t ")).count(), 16);
}

#[test]
fn clamped_with_positive_thickness_is_rejected() {
    let out = Command::new(BIN)
        .args(["study", "--t-list", "1e-2", "--levels", "1", "--bc", "clamped", "--out", "/dev/null"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clamped"));
}
