use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchsel_core::classifier::{infer, DriftConfig, DriftState, VoteMode};
use switchsel_core::detector::{auto_label, calibrate, detect, estimate_noise, estimate_switching_durations, EventSegment};
use switchsel_core::selector::{train, DetectionSettings, Model, TrainOptions};
use switchsel_core::synth::{generate_corpus, generate_event_windows, Corpus, CorpusSpec};
use switchsel_core::{ScenarioId, StreamingMonitor};

const INTERVAL: f64 = 0.033;

fn segment(corpus: &Corpus) -> (Vec<EventSegment>, DetectionSettings) {
    let psd = corpus.series.interval_psd(0, INTERVAL).unwrap();
    let noise = estimate_noise(&psd, 6.0).unwrap();
    let first = calibrate(&noise, 6.0, &[1.0]).unwrap();
    let durations = estimate_switching_durations(&psd, first.threshold, 0.3);
    let calibration = calibrate(&noise, 6.0, &durations).unwrap();
    let windows = detect(&psd, &calibration);
    let events = windows
        .into_iter()
        .map(|w| EventSegment::excerpt(&corpus.series, w, None).unwrap())
        .collect();
    let settings = DetectionSettings {
        calibration,
        interval_len: psd.interval_len,
        trigger_channel: "ch0".into(),
    };
    (events, settings)
}

fn trained(corpus: &Corpus) -> (Model, Vec<EventSegment>) {
    let (events, settings) = segment(corpus);
    let cycle: Vec<ScenarioId> = vec!["on".into(), "off".into()];
    let labeled = auto_label(events, &cycle, &cycle[0]).unwrap();
    let mut model = train(&labeled, &TrainOptions::default()).unwrap().model;
    model.detection = Some(settings);
    (model, labeled)
}

#[test]
fn detect_label_train_classify() {
    let corpus = generate_corpus(&CorpusSpec::benchmark(40, 11)).unwrap();
    let (model, labeled) = trained(&corpus);
    assert_eq!(labeled.len(), corpus.truth.len());
    for (e, t) in labeled.iter().zip(&corpus.truth) {
        assert_eq!(e.label.as_ref(), Some(&t.label));
    }
    let correct = labeled[10..]
        .iter()
        .filter(|e| infer(e, &model, None, VoteMode::Equal).unwrap().estimate.scenario == *e.label.as_ref().unwrap())
        .count();
    assert_eq!(correct, labeled.len() - 10);
}

#[test]
fn streaming_monitor_matches_batch() {
    let corpus = generate_corpus(&CorpusSpec::benchmark(24, 5)).unwrap();
    let (model, labeled) = trained(&corpus);
    let config = DriftConfig::default();

    let mut batch_state = DriftState::from_model(&model, config).unwrap();
    let batch: Vec<_> = labeled
        .iter()
        .map(|e| {
            let e = e.clone();
            let r = infer(&e, &model, Some(&mut batch_state), VoteMode::ProbWeighted).unwrap();
            (e.start, r.estimate.scenario, r.features)
        })
        .collect();

    let mut monitor = StreamingMonitor::new(
        &model,
        vec!["ch0".into()],
        corpus.series.sample_rate(),
        Some(DriftState::from_model(&model, config).unwrap()),
        VoteMode::ProbWeighted,
    )
    .unwrap();
    let samples = corpus.series.channel(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pos = 0;
    let mut streamed = Vec::new();
    let mut peak_buffer = 0;
    while pos < samples.len() {
        let n = rng.random_range(1..5000).min(samples.len() - pos);
        streamed.extend(monitor.push(&[samples[pos..pos + n].to_vec()]).unwrap());
        peak_buffer = peak_buffer.max(monitor.buffered_samples());
        pos += n;
    }
    let (tail, state) = monitor.finish().unwrap();
    streamed.extend(tail);

    assert_eq!(streamed.len(), batch.len());
    for (s, (start, scenario, features)) in streamed.iter().zip(&batch) {
        assert!((s.window.start - start).abs() < 1e-9);
        assert_eq!(&s.inference.estimate.scenario, scenario);
        assert_eq!(&s.inference.features, features);
    }
    assert_eq!(state.unwrap(), batch_state);
    let window = model.detection.as_ref().unwrap().calibration.refractory;
    assert!(peak_buffer as f64 <= (window + 2.0 * INTERVAL) * corpus.series.sample_rate() + 5000.0);
}

#[test]
fn identical_scenarios_warn_and_score_zero() {
    let spec = CorpusSpec::benchmark(10, 3);
    let events = generate_event_windows(&spec, 0.3, 0.0).unwrap();
    // same excerpts under both labels
    let mut twins = Vec::new();
    for e in events.iter().take(5) {
        twins.push(e.clone().with_label("on".into()));
        twins.push(e.clone().with_label("off".into()));
    }
    let t = train(&twins, &TrainOptions::default()).unwrap();
    assert!(t.report.scores.iter().all(|&s| s == 0.0));
    assert!(!t.warnings.is_empty());
    assert_eq!(t.model.descriptors.len(), 5);
}

#[test]
fn single_descriptor_model() {
    let spec = CorpusSpec::benchmark(30, 8);
    let events = generate_event_windows(&spec, 0.3, 0.02).unwrap();
    let opts = TrainOptions {
        selected: 1,
        ..TrainOptions::default()
    };
    let model = train(&events, &opts).unwrap().model;
    assert_eq!(model.descriptors.len(), 1);
    for e in &events[10..] {
        let r = infer(e, &model, None, VoteMode::Equal).unwrap();
        assert_eq!(r.estimate.votes.len(), 1);
        assert_eq!(r.estimate.scenario, r.estimate.votes[0].scenario);
    }
}

#[test]
fn unlabeled_training_is_rejected() {
    let spec = CorpusSpec::benchmark(10, 3);
    let mut events = generate_event_windows(&spec, 0.3, 0.0).unwrap();
    events[4].label = None;
    assert!(train(&events, &TrainOptions::default()).is_err());
}
