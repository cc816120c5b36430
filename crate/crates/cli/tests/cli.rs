use std::path::Path;
use std::process::Command;

use pxm4::model::{ModelConfig, PixelModel};
use pxm4_cli::{run, DEFAULT_SUBSAMPLE_SIZES, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

fn pxm4(args: &[&str]) -> i32 {
    run(std::iter::once("pxm4").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn render_writes_a_readable_patch_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.txt");
    std::fs::write(&input, "the cat sleeps\n\nкіт спить\n猫在睡觉\n").unwrap();
    let out = dir.path().join("c.pxm4");
    assert_eq!(pxm4(&["render", "--in", s(&input), "--out", s(&out)]), EXIT_OK);
    let seqs = pxm4::render::read_patch_file(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(seqs.len(), 3);
    let want = pxm4::render::render_text("кіт спить", &Default::default()).unwrap();
    assert_eq!(seqs[1].pixels, want.pixels);
    assert_eq!(seqs[1].word_spans, want.word_spans);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pxm4(&["finetune", "--task", "udp"]), EXIT_USAGE);
    assert_eq!(pxm4(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(pxm4(&[]), EXIT_USAGE);
    assert_eq!(pxm4(&["finetune", "--task", "pos", "--data", "toy"]), EXIT_USAGE);
    assert_eq!(pxm4(&["retrieve", "--pairs", "engukr"]), EXIT_USAGE);
    assert_eq!(pxm4(&["retrieve", "--model", "x", "--preset", "huge"]), EXIT_DATA);
    assert_eq!(pxm4(&["--help"]), EXIT_OK);
}

#[test]
fn binary_reports_exit_codes_and_logs_to_stderr() {
    let out = Command::new(env!("CARGO_BIN_EXE_pxm4"))
        .args(["finetune", "--task", "udp"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pxm4"))
        .args(["retrieve", "--layers", "0..1", "--pairs", "eng-zho", "--out", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolved config"));
}

#[test]
fn retrieve_reports_every_layer_of_every_pair() {
    let dir = tempfile::tempdir().unwrap();
    let code = pxm4(&["retrieve", "--layers", "0..12", "--pairs", "eng-ukr,eng-hin", "--out", s(dir.path())]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&dir.path().join("retrieval.csv"));
    assert_eq!(rows.len(), 26);
    for pair in ["eng-ukr", "eng-hin"] {
        let layers: Vec<usize> = rows
            .iter()
            .filter(|r| r.starts_with(&format!("{pair},")))
            .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(layers, (0..=12).collect::<Vec<_>>());
    }
    for r in &rows {
        let v: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn runs_are_reproducible_per_seed() {
    let go = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let code = pxm4(&["retrieve", "--layers", "0..3", "--pairs", "eng-ukr", "--seed", seed, "--out", s(dir.path())]);
        assert_eq!(code, EXIT_OK);
        std::fs::read_to_string(dir.path().join("retrieval.csv")).unwrap()
    };
    assert_eq!(go("4"), go("4"));
}

#[test]
fn self_retrieval_from_a_parallel_directory_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let par = dir.path().join("par");
    std::fs::create_dir(&par).unwrap();
    let lines = "one fish\ntwo fish\nred fish\nblue fish\nold boat\nnew boat\nsad cat\n";
    std::fs::write(par.join("aaa.txt"), lines).unwrap();
    std::fs::write(par.join("bbb.txt"), lines).unwrap();
    std::fs::write(par.join("ccc.txt"), "short\n").unwrap();
    let out = dir.path().join("o");
    let code = pxm4(&["retrieve", "--parallel", s(&par), "--pairs", "aaa-bbb", "--layers", "0,2", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(csv_rows(&out.join("retrieval.csv")), ["aaa-bbb,0,1.0", "aaa-bbb,2,1.0"]);
    let code = pxm4(&["retrieve", "--parallel", s(&par), "--pairs", "aaa-ccc", "--out", s(&out)]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn degenerate_encoder_is_a_numeric_failure() {
    // an all-zero encoder pools every sentence to the zero vector
    let dir = tempfile::tempdir().unwrap();
    let mut m: PixelModel<f32> = PixelModel::new(ModelConfig::tiny(64), 0).unwrap();
    for t in m.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let ck = dir.path().join("zero.pxck");
    m.save(&ck).unwrap();
    let code = pxm4(&["retrieve", "--model", s(&ck), "--pairs", "eng-ukr", "--out", s(dir.path())]);
    assert_eq!(code, EXIT_NUMERIC);
}

#[test]
fn malformed_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conllu");
    std::fs::write(&bad, "1\tdog\t_\t_\t_\t_\t0\troot\t_\n").unwrap();
    assert_eq!(pxm4(&["finetune", "--task", "udp", "--data", s(&bad), "--dry-run"]), EXIT_DATA);
    let missing = dir.path().join("missing.tsv");
    assert_eq!(pxm4(&["finetune", "--task", "cls", "--data", s(&missing)]), EXIT_DATA);
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    for args in [
        vec!["pretrain", "--steps", "3"],
        vec!["finetune", "--task", "ner", "--data", "toy"],
        vec!["retrieve"],
        vec!["export-embeddings"],
    ] {
        let mut a = args.clone();
        a.extend(["--dry-run", "--out", s(&out)]);
        assert_eq!(pxm4(&a), EXIT_OK, "{args:?}");
        assert!(!out.exists(), "{args:?}");
    }
}

#[test]
fn config_file_supplies_flags_and_explicit_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("o");
    std::fs::write(&cfg, format!("# retrieval setup\npairs = eng-zho\nlayers=0..1\nout={}\n", s(&out))).unwrap();
    assert_eq!(pxm4(&["retrieve", "--config", s(&cfg)]), EXIT_OK);
    let rows = csv_rows(&out.join("retrieval.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("eng-zho,0,"));

    assert_eq!(pxm4(&["retrieve", "--config", s(&cfg), "--layers", "2"]), EXIT_OK);
    let rows = csv_rows(&out.join("retrieval.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("eng-zho,2,"));

    std::fs::write(&cfg, "no equals sign\n").unwrap();
    assert_eq!(pxm4(&["retrieve", "--config", s(&cfg)]), EXIT_USAGE);
    std::fs::write(&cfg, "bogus-key=1\n").unwrap();
    assert_eq!(pxm4(&["retrieve", "--config", s(&cfg)]), EXIT_USAGE);
}

#[test]
fn pretrain_then_finetune_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pre");
    let code = pxm4(&["pretrain", "--preset", "tiny", "--steps", "3", "--batch-size", "4", "--out", s(&pre)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(csv_rows(&pre.join("pretrain_trace.csv")).len(), 3);
    let ck = pre.join("model.pxck");
    assert!(PixelModel::<f32>::load(&ck).is_ok());

    let ft = dir.path().join("ft");
    let code = pxm4(&[
        "finetune", "--task", "cls", "--data", "toy", "--test", "toy", "--model", s(&ck), "--max-steps", "4",
        "--batch-size", "8", "--eval-every", "2", "--lr-grid", "1e-3,2e-3", "--out", s(&ft),
    ]);
    assert_eq!(code, EXIT_OK);
    let metrics = csv_rows(&ft.join("metrics.csv"));
    assert!(metrics[0].starts_with("cls,und,0,val_macro_f1,"));
    assert!(metrics[1].starts_with("cls,und,0,test_macro_f1,"));

    let ev = dir.path().join("ev");
    let code = pxm4(&["evaluate", "--model", s(&ft.join("finetuned.pxck")), "--data", "toy", "--lang", "eng", "--out", s(&ev)]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&ev.join("metrics.csv"));
    assert!(rows[0].starts_with("cls,eng,0,eval_macro_f1,"));
    // evaluation of the same checkpoint on the same data reproduces the test score
    let v = |r: &str| r.rsplit(',').next().unwrap().to_string();
    assert_eq!(v(&rows[0]), v(&metrics[1]));
}

#[test]
fn finetune_udp_from_files_reports_las_and_uas() {
    let dir = tempfile::tempdir().unwrap();
    let tb = dir.path().join("tb.conllu");
    let mut f = std::fs::File::create(&tb).unwrap();
    pxm4::data::write_conllu(&mut f, &pxm4::data::toy::treebank()).unwrap();
    let out = dir.path().join("o");
    let code = pxm4(&[
        "finetune", "--task", "udp", "--data", s(&tb), "--test", s(&tb), "--preset", "tiny", "--max-steps", "2",
        "--batch-size", "4", "--lr", "1e-3", "--out", s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let metrics: Vec<String> = csv_rows(&out.join("metrics.csv"))
        .iter()
        .map(|r| r.split(',').nth(3).unwrap().to_string())
        .collect();
    assert_eq!(metrics, ["val_las", "test_las", "test_uas"]);
}

#[test]
fn probe_writes_one_row_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("case");
    std::fs::create_dir(&data).unwrap();
    std::fs::write(data.join("train.tsv"), "кіт\tNom\nкота\tAcc\nпес\tNom\nпса\tAcc\n").unwrap();
    std::fs::write(data.join("dev.tsv"), "дім\tNom\n").unwrap();
    std::fs::write(data.join("test.tsv"), "ліс\tNom\nліса\tAcc\n").unwrap();
    let out = dir.path().join("o");
    let code = pxm4(&["probe", "--data", s(&data), "--lang", "ukr", "--preset", "tiny", "--steps", "5", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out.join("probe.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("case,ukr,0,"));

    std::fs::remove_file(data.join("test.tsv")).unwrap();
    assert_eq!(pxm4(&["probe", "--data", s(&data), "--out", s(&out)]), EXIT_DATA);
}

#[test]
fn export_embeddings_rows_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    std::fs::write(
        &corpus,
        "{\"text\":\"a cat\",\"lang\":\"eng\"}\n{\"text\":\"a dog\",\"lang\":\"eng\"}\n{\"text\":\"кіт\",\"lang\":\"ukr\"}\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let code = pxm4(&["export-embeddings", "--corpus", s(&corpus), "--preset", "tiny", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let tsv = out.join("embeddings.tsv");
    let emb = pxm4::analysis::read_embeddings_tsv(std::io::BufReader::new(std::fs::File::open(&tsv).unwrap())).unwrap();
    assert_eq!(emb.len(), 3 * 3);
    assert_eq!(std::fs::read_to_string(out.join("embeddings.tsv.meta")).unwrap(), "rows\t9\ndim\t32\n");
    // two languages × three layers
    assert_eq!(csv_rows(&out.join("centroids.tsv")).len(), 6);
}

#[test]
fn subsample_default_grid_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let big = dir.path().join("big.txt");
    let text: String = (0..8192).map(|i| format!("line {i}\n")).collect();
    std::fs::write(&big, text).unwrap();
    let out = dir.path().join("o");
    // the default grid yields 4 sizes × 8 seeds
    assert_eq!(pxm4(&["subsample", "--in", s(&big), "--out", s(&out)]), EXIT_OK);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 32);
    assert_eq!(DEFAULT_SUBSAMPLE_SIZES, [1024, 2048, 4096, 8192]);
    let a = std::fs::read_to_string(out.join("big.n1024.s3.txt")).unwrap();
    assert_eq!(a.lines().count(), 1024);
    assert_ne!(a, std::fs::read_to_string(out.join("big.n1024.s4.txt")).unwrap());

    let out2 = dir.path().join("o2");
    assert_eq!(pxm4(&["subsample", "--in", s(&big), "--sizes", "1024", "--seeds", "1", "--seed", "3", "--out", s(&out2)]), EXIT_OK);
    assert_eq!(std::fs::read_to_string(out2.join("big.n1024.s3.txt")).unwrap(), a);

    let tb = dir.path().join("tb.conllu");
    let mut f = std::fs::File::create(&tb).unwrap();
    pxm4::data::write_conllu(&mut f, &pxm4::data::toy::treebank()).unwrap();
    let out3 = dir.path().join("o3");
    assert_eq!(pxm4(&["subsample", "--in", s(&tb), "--sizes", "4,8", "--seeds", "2", "--out", s(&out3)]), EXIT_OK);
    let sub = pxm4::data::parse_conllu(std::io::BufReader::new(std::fs::File::open(out3.join("tb.n8.s1.conllu")).unwrap())).unwrap();
    assert_eq!(sub.len(), 8);

    assert_eq!(pxm4(&["subsample", "--in", s(&tb), "--sizes", "17", "--out", s(&out3)]), EXIT_DATA);
}
