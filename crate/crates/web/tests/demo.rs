use nlurank::reranker::sigmoid;
use nlurank_web::{benchmark, parse_interpretation, rerank, semer, BenchmarkInput, RerankInput};

#[test]
fn semer_counts_slot_edits() {
    let r = semer("PlayMusic artist=adele", "PlayMusic artist=adele song=hello").unwrap();
    assert_eq!((r.edits, r.truth_length), (1, 3));
    assert!((r.semer - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.interpretation_error, 1);

    let exact = semer("PlayMusic song=hello_world", "PlayMusic song=hello_world").unwrap();
    assert_eq!((exact.semer, exact.interpretation_error), (0.0, 0));

    let wrong_intent = semer("ReadBook", "PlayMusic").unwrap();
    assert_eq!(wrong_intent.semer, 1.0);
}

#[test]
fn interpretations_must_be_well_formed() {
    assert!(parse_interpretation("").is_err());
    assert!(parse_interpretation("artist=adele").is_err());
    assert!(parse_interpretation("PlayMusic artist").is_err());
    assert!(parse_interpretation("PlayMusic =adele").is_err());
    let seq = parse_interpretation("PlayMusic song=rolling_in_the_deep").unwrap();
    assert_eq!(seq.len(), 2);
}

fn input(json: &str) -> RerankInput {
    serde_json::from_str(json).unwrap()
}

#[test]
fn rerank_merges_domains_by_score() {
    let req = input(
        r#"{"n_best": 3, "domains": [
            {"domain": "Music", "weights": [1, 1, 1], "hypotheses": [
                {"label": "PlayMusic", "features": [-0.1, -0.2, -0.3]},
                {"label": "Pause", "features": [-0.1, -2.0, -0.3]}]},
            {"domain": "Books", "weights": [2, 1, 1], "bias": 0.5, "hypotheses": [
                {"label": "ReadBook", "features": [-1.0, -0.1, -0.1]}]}]}"#,
    );
    let out = rerank(&req).unwrap();
    let labels: Vec<&str> = out.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(labels, ["PlayMusic", "ReadBook", "Pause"]);
    assert!((out[0].score - (-0.6)).abs() < 1e-12);
    assert!((out[1].score - (0.5 - 2.0 - 0.2)).abs() < 1e-12);
    for e in &out {
        assert_eq!(e.confidence, sigmoid(e.score));
    }
    let music: f64 = out.iter().filter(|e| e.domain == "Music").map(|e| e.within_domain).sum();
    assert!((music - 1.0).abs() < 1e-12);
    assert_eq!(out[1].within_domain, 1.0);

    let top1 = input(&serde_json::to_string(&serde_json::json!({
        "n_best": 1,
        "domains": [{"domain": "Music", "weights": [1, 1, 1], "hypotheses": [
            {"label": "A", "features": [-1, -1, -1]}, {"label": "B", "features": [-1, -1, -0.5]}]}]
    }))
    .unwrap());
    assert_eq!(rerank(&top1).unwrap()[0].label, "B");
}

#[test]
fn rerank_rejects_bad_requests() {
    let dup = input(
        r#"{"n_best": 2, "domains": [
            {"domain": "Music", "weights": [1, 1, 1], "hypotheses": []},
            {"domain": "Music", "weights": [1, 1, 1], "hypotheses": []}]}"#,
    );
    assert!(rerank(&dup).is_err());
    let zero = input(r#"{"n_best": 0, "domains": []}"#);
    assert!(rerank(&zero).is_err());
}

#[test]
fn small_benchmark_reports_every_scheme() {
    let out = benchmark(&BenchmarkInput {
        seed: 2,
        train_size: 300,
        dev_size: 90,
        test_size: 90,
        max_iterations: 100,
    })
    .unwrap();
    let names: Vec<&str> = out.iter().map(|s| s.scheme.as_str()).collect();
    assert_eq!(names, ["Baseline", "R1", "R2", "R3"]);
    for s in &out {
        assert_eq!(s.bins.iter().map(|b| b.count).sum::<usize>(), 90);
        assert!((0.0..=1.0).contains(&s.ece));
        assert_eq!(s.weights.len(), 3);
    }
    assert_eq!(out[0].weights["Music"].0, [1.0, 1.0, 1.0]);
}
