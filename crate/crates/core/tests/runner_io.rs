use bdg_core::model::Semiclassical;
use bdg_core::runner::csv::{Table, SERIES_HEADER};
use bdg_core::runner::{cmd_evolve, cmd_figure, FigureOutput, FigurePreset, KindSelection, RunConfig};

fn small(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        h: Semiclassical::from_exponent(2).unwrap(),
        n_period: 4,
        m_density: 16,
        t_end_factor: 0.05,
        samples: 50,
        kind: KindSelection::Both,
        out_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn evolve_writes_series_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_evolve(&small(dir.path())).unwrap();
    assert_eq!(report.runs.len(), 2);
    for name in ["series_full.csv", "series_linear.csv", "norm.svg", "psi.svg", "delta_f.svg"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let text = std::fs::read_to_string(dir.path().join("series_full.csv")).unwrap();
    let table = Table::parse(&text).unwrap();
    assert_eq!(table.header.join(","), SERIES_HEADER);
    assert_eq!(table.meta_value("kind"), Some("full"));
    let t = table.column("t").unwrap();
    assert_eq!(t.len(), report.runs[0].series.rows.len());
    assert_eq!(t[0], 0.0);
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    assert!(table.column("delta_f").unwrap().iter().all(|d| *d < 1e-6));
}

#[test]
fn evolve_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_evolve(&small(a.path())).unwrap();
    cmd_evolve(&small(b.path())).unwrap();
    for name in ["series_full.csv", "series_linear.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }
}

#[test]
fn gap_figure_lands_in_its_own_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_figure(FigurePreset::Fig1, &small(dir.path())).unwrap();
    let FigureOutput::GapTable(rows) = out else { panic!("fig1 is the gap table") };
    assert_eq!(rows.len(), 3);
    assert!(dir.path().join("fig1").join("gap_table.csv").is_file());
}
