use std::sync::Arc;

use colloc_etl::geodesy::EllipsoidConsts;
use colloc_etl::granule::ImageWindow;
use colloc_etl::granule::{
    format_abi_key, format_cpr_name, write_granule, FormatTag, GrammarRegistry, GranuleMeta, NameFields,
};
use colloc_etl::sources::{
    fetch, fetch_with, list_granules, open_transport, select_covering, FetchCache, LocalDirTransport, MemoryTransport,
    ReaderRegistry, Source, SourceError, SourceKind, SourceSpec, Transport, TransportError, TransportOp,
};
use colloc_etl::synthgen::{gen_image, SceneSpec, ValueRule};
use colloc_etl::UtcMicros;
use proptest::prelude::*;

const HOUR: i64 = 3_600_000_000;

fn abi(product: &str, band: u8, start: i64, len_s: i64) -> GranuleMeta {
    let t_start = UtcMicros(start);
    let t_end = t_start.plus_seconds(len_s as f64);
    let mut m = GranuleMeta {
        source_id: "goes".into(),
        product: product.into(),
        band: Some(band),
        t_start,
        t_end,
        format: FormatTag::ExtAGeoImage,
        uri: String::new(),
        naming: NameFields::Abi { scan_mode: 6, created: t_end },
    };
    m.uri = format_abi_key(&m).unwrap();
    m
}

fn object_store(t: Arc<MemoryTransport>) -> Source {
    let spec =
        SourceSpec { id: "goes".into(), kind: SourceKind::ObjectStore, root: "mem://goes".into(), name_grammar: None };
    Source::new(spec, t, &GrammarRegistry::default()).unwrap()
}

fn granule_set() -> impl Strategy<Value = Vec<GranuleMeta>> {
    let base = 1_640_995_200_000_000i64; // 2022-01-01
    prop::collection::vec(
        (
            prop::sample::select(vec!["ABI-L1b-RadF", "ABI-L1b-RadC"]),
            prop::sample::select(vec![2u8, 7, 13]),
            0i64..72 * 6,
            0i64..6_000_000,
            60i64..3_600,
        )
            .prop_map(move |(p, b, slot, jitter, len)| abi(p, b, base + slot * 600_000_000 + jitter * 10, len)),
        0..60,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn listing_matches_exhaustive_filter(
        granules in granule_set(),
        from in -10i64..80,
        span in 0i64..(20 * HOUR),
        band in prop::option::of(prop::sample::select(vec![2u8, 7, 13])),
    ) {
        let store = Arc::new(MemoryTransport::new());
        for g in &granules {
            store.put(g.uri.clone(), Vec::new());
        }
        store.put("ABI-L1b-RadF/2022/001/00/README.txt", Vec::new());
        let src = object_store(store.clone());
        let t0 = UtcMicros(1_640_995_200_000_000 + from * HOUR);
        let t1 = UtcMicros(t0.0 + span);
        let listing = list_granules(&src, t0, t1, "ABI-L1b-RadF", band).unwrap();

        let mut expect: Vec<&GranuleMeta> = granules
            .iter()
            .filter(|g| g.product == "ABI-L1b-RadF" && band.is_none_or(|b| g.band == Some(b)))
            .filter(|g| g.t_start <= t1 && g.t_end >= t0)
            .collect();
        expect.sort_by(|a, b| (a.t_start, &a.uri).cmp(&(b.t_start, &b.uri)));
        expect.dedup_by(|a, b| a.uri == b.uri);
        let got: Vec<&str> = listing.metas.iter().map(|m| m.uri.as_str()).collect();
        let want: Vec<&str> = expect.iter().map(|m| m.uri.as_str()).collect();
        prop_assert_eq!(got, want);
        prop_assert!(listing.metas.iter().all(|m| m.source_id == "goes"));
        for op in store.ops() {
            let TransportOp::List(prefix) = op else { panic!("listing fetched objects") };
            prop_assert!(prefix.starts_with("ABI-L1b-RadF/"), "{}", prefix);
        }
    }

    #[test]
    fn selection_ignores_candidate_order(
        granules in granule_set(),
        from in 0i64..72,
        span in 0i64..(2 * HOUR),
        dt_max in 0.0..900.0f64,
        seed in any::<u64>(),
    ) {
        let t0 = UtcMicros(1_640_995_200_000_000 + from * HOUR);
        let t1 = UtcMicros(t0.0 + span);
        let mut shuffled = granules.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                let j = (seed.wrapping_mul(i as u64 + 7) % n as u64) as usize;
                shuffled.swap(i, j);
            }
        }
        prop_assert_eq!(
            select_covering(&granules, t0, t1, dt_max),
            select_covering(&shuffled, t0, t1, dt_max)
        );
    }
}

#[test]
fn empty_candidates_report_no_gap() {
    let t0 = UtcMicros(0);
    assert_eq!(select_covering(&[], t0, t0, 900.0), Err(SourceError::NoTemporalMatch { best_gap_s: None }));
    assert!(matches!(select_covering(&[], UtcMicros(5), UtcMicros(1), 1.0), Err(SourceError::InvalidWindow(_))));
}

#[test]
fn malformed_keys_are_reported_not_fatal() {
    let good = abi("ABI-L1b-RadF", 13, 1_640_995_200_000_000 + 600_000_000, 600);
    let bad = good.uri.replace("_G16_s", "_G16_x");
    let store = Arc::new(MemoryTransport::with_objects([(good.uri.clone(), vec![]), (bad.clone(), vec![])]));
    let src = object_store(store);
    let t0 = UtcMicros(1_640_995_200_000_000);
    let listing = list_granules(&src, t0, t0.plus_seconds(3600.0), "ABI-L1b-RadF", None).unwrap();
    assert_eq!(listing.metas.len(), 1);
    assert_eq!(listing.skipped.len(), 1);
    assert_eq!(listing.skipped[0].key, bad);
    assert_eq!(listing.skipped[0].position, bad.find("_G16_x").unwrap());
    let line: serde_json::Value = serde_json::from_str(listing.diagnostics_jsonl().trim()).unwrap();
    assert_eq!(line["source_id"], "goes");
}

#[test]
fn transport_failures_propagate_unchanged() {
    let store = Arc::new(MemoryTransport::new());
    let err = TransportError::new("list", "x", "throttled");
    store.fail_next(err.clone());
    let src = object_store(store.clone());
    let t0 = UtcMicros(1_640_995_200_000_000);
    assert_eq!(list_granules(&src, t0, t0, "ABI-L1b-RadF", None).unwrap_err(), SourceError::Transport(err));
    assert!(list_granules(&src, t0, t0, "ABI-L1b-RadF", None).is_ok());
}

fn scene() -> colloc_etl::granule::Granule {
    let mut spec = SceneSpec::new(13, ValueRule::Checker { k: 3 }, UtcMicros(1_640_995_200_000_000));
    spec.window = Some(ImageWindow { row0: 2700, col0: 2700, rows: 20, cols: 30 });
    gen_image(&spec, &EllipsoidConsts::default()).unwrap()
}

#[test]
fn fetch_normalizes_and_caches() {
    let g = scene();
    let store = Arc::new(MemoryTransport::new());
    store.put(g.meta().uri.clone(), write_granule(&g));
    let src = object_store(store.clone());
    let meta = g.meta().clone();
    let common = fetch(&src, &meta).unwrap();
    assert_eq!(common.format(), FormatTag::ExtCCommon);
    assert!(common.params()[0].bit_eq(&g.params()[0]));

    let dir = tempfile::tempdir().unwrap();
    let cache = FetchCache::new(dir.path());
    let readers = ReaderRegistry::default();
    let a = fetch_with(&src, &meta, &readers, Some(&cache)).unwrap();
    let gets = store.ops().iter().filter(|o| matches!(o, TransportOp::Get(_))).count();
    store.fail_next(TransportError::new("get", &meta.uri, "offline"));
    let b = fetch_with(&src, &meta, &readers, Some(&cache)).unwrap();
    assert_eq!(store.ops().iter().filter(|o| matches!(o, TransportOp::Get(_))).count(), gets);
    assert!(a.params()[0].bit_eq(&b.params()[0]));
}

#[test]
fn declared_format_must_match_payload() {
    let g = scene();
    let store = Arc::new(MemoryTransport::new());
    store.put("track.hdf", write_granule(&g));
    let src = object_store(store);
    let mut meta = g.meta().clone();
    meta.uri = "track.hdf".into();
    meta.format = FormatTag::ExtBTrackProfile;
    meta.band = None;
    assert!(matches!(fetch(&src, &meta), Err(SourceError::FormatMismatch { .. })));
}

#[test]
fn local_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let t = LocalDirTransport::new(dir.path());
    let meta = GranuleMeta {
        source_id: String::new(),
        product: "2B-CLDCLASS".into(),
        band: None,
        t_start: UtcMicros(1_640_995_200_000_000),
        t_end: UtcMicros(1_640_995_200_000_000),
        format: FormatTag::ExtBTrackProfile,
        uri: String::new(),
        naming: NameFields::Cpr { granule: 81234, release: 5, epoch: 0 },
    };
    let name = format!("2B-CLDCLASS/2022/001/{}", format_cpr_name(&meta).unwrap());
    std::fs::create_dir_all(dir.path().join("2B-CLDCLASS/2022/001")).unwrap();
    std::fs::write(dir.path().join(&name), b"x").unwrap();
    std::fs::write(dir.path().join("2B-CLDCLASS/2022/notes.txt"), b"y").unwrap();
    assert_eq!(t.list("2B-CLDCLASS/2022/001/").unwrap(), vec![name.clone()]);
    assert_eq!(t.list("2B-CLDCLASS/2022/").unwrap().len(), 2);
    assert!(t.list("2B-CLDCLASS/2023/").unwrap().is_empty());
    assert_eq!(t.get(&name).unwrap(), b"x");
    assert!(t.get("../escape").is_err());

    let spec = SourceSpec {
        id: "cloudsat".into(),
        kind: SourceKind::RemoteDir,
        root: format!("file://{}", dir.path().display()),
        name_grammar: None,
    };
    let src = Source::new(spec.clone(), open_transport(&spec).unwrap(), &GrammarRegistry::default()).unwrap();
    let listing = list_granules(&src, meta.t_start, meta.t_start, "2B-CLDCLASS", None).unwrap();
    assert_eq!(listing.metas.len(), 1);
    assert_eq!(listing.metas[0].uri, name);

    let remote = SourceSpec { root: "sftp://host/data".into(), ..spec };
    assert!(matches!(open_transport(&remote), Err(SourceError::Transport(_))));
}
