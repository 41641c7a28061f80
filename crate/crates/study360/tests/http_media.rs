mod common;

use axum::http::StatusCode;
use common::{bytes, get, header, media_dir, sha256sum, start, study};
use rand::{Rng, SeedableRng};
use study360_core::log::NullLog;
use study360_core::media::MediaCatalog;

async fn small_file_server(dir: &std::path::Path) -> study360::Server {
    media_dir(dir);
    std::fs::write(dir.join("k.bin"), bytes(1000, 7)).unwrap();
    start(study(10_000, vec![]), MediaCatalog::load(dir).unwrap(), Box::new(NullLog)).await
}

#[tokio::test]
async fn range_case_table() {
    let dir = tempfile::tempdir().unwrap();
    let server = small_file_server(dir.path()).await;
    let url = format!("{}/media/k.bin", server.base_url());
    let file = std::fs::read(dir.path().join("k.bin")).unwrap();

    // header, status, inclusive span served
    type Case = (&'static str, StatusCode, Option<(usize, usize)>);
    let cases: &[Case] = &[
        ("bytes=0-499", StatusCode::PARTIAL_CONTENT, Some((0, 499))),
        ("bytes=-500", StatusCode::PARTIAL_CONTENT, Some((500, 999))),
        ("bytes=900-2000", StatusCode::PARTIAL_CONTENT, Some((900, 999))),
        ("bytes=0-0", StatusCode::PARTIAL_CONTENT, Some((0, 0))),
        ("bytes=999-", StatusCode::PARTIAL_CONTENT, Some((999, 999))),
        ("bytes=-5000", StatusCode::PARTIAL_CONTENT, Some((0, 999))),
        ("bytes=1000-", StatusCode::RANGE_NOT_SATISFIABLE, None),
        ("bytes=1000-1200", StatusCode::RANGE_NOT_SATISFIABLE, None),
        ("bytes=0-1,5-9", StatusCode::OK, None),
        ("items=0-10", StatusCode::OK, None),
        ("bytes=abc", StatusCode::OK, None),
        ("bytes=10-5", StatusCode::OK, None),
    ];
    for &(range, status, span) in cases {
        let (got, headers, body) = get(&url, &[("range", range)]).await;
        assert_eq!(got, status, "{range}");
        assert_eq!(header(&headers, "accept-ranges"), Some("bytes"), "{range}");
        match (status, span) {
            (StatusCode::PARTIAL_CONTENT, Some((a, b))) => {
                assert_eq!(header(&headers, "content-range"), Some(format!("bytes {a}-{b}/1000").as_str()));
                assert_eq!(body, file[a..=b], "{range}");
                assert_eq!(header(&headers, "content-length"), Some((b - a + 1).to_string().as_str()));
            }
            (StatusCode::RANGE_NOT_SATISFIABLE, _) => {
                assert_eq!(header(&headers, "content-range"), Some("bytes */1000"));
                assert!(body.is_empty());
            }
            _ => assert_eq!(body, file, "{range}"),
        }
    }

    let (status, headers, body) = get(&url, &[]).await;
    assert_eq!((status, body.len()), (StatusCode::OK, 1000));
    assert_eq!(header(&headers, "content-range"), None);
    assert_eq!(get(&format!("{}/media/nope.bin", server.base_url()), &[]).await.0, StatusCode::NOT_FOUND);
    server.shutdown().await;
}

#[tokio::test]
async fn random_ranges_reassemble_one_mebibyte() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(study(10_000, vec![]), media_dir(dir.path()), Box::new(NullLog)).await;
    let file = std::fs::read(dir.path().join("video.mp4")).unwrap();
    let url = format!("{}/media/video.mp4", server.base_url());

    let mut rng = rand::rngs::StdRng::seed_from_u64(64);
    for _ in 0..3 {
        let mut cuts: Vec<usize> = (0..63).map(|_| rng.random_range(1..file.len())).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(file.len());
        let mut out = Vec::with_capacity(file.len());
        for w in bounds.windows(2) {
            let (status, _, body) = get(&url, &[("range", &format!("bytes={}-{}", w[0], w[1] - 1))]).await;
            assert_eq!(status, StatusCode::PARTIAL_CONTENT);
            assert_eq!(body.len(), w[1] - w[0]);
            out.extend(body);
        }
        assert!(out == file, "reassembled bytes differ");
    }
    server.shutdown().await;
}

#[tokio::test]
async fn etag_is_quoted_sha256_and_tracks_content() {
    let dir = tempfile::tempdir().unwrap();
    let server = small_file_server(dir.path()).await;
    let url = format!("{}/media/k.bin", server.base_url());
    let expected = format!("\"{}\"", sha256sum(&dir.path().join("k.bin")));

    let (_, h1, _) = get(&url, &[]).await;
    let (_, h2, _) = get(&url, &[("range", "bytes=3-9")]).await;
    assert_eq!(header(&h1, "etag"), Some(expected.as_str()));
    assert_eq!(header(&h2, "etag"), Some(expected.as_str()));

    let (status, _, body) = get(&url, &[("if-none-match", &expected)]).await;
    assert_eq!((status, body.len()), (StatusCode::NOT_MODIFIED, 0));
    server.shutdown().await;

    // same bytes under another name share the tag; one changed byte does not
    let original = std::fs::read(dir.path().join("k.bin")).unwrap();
    std::fs::write(dir.path().join("copy.bin"), &original).unwrap();
    let mut changed = original.clone();
    changed[500] ^= 1;
    std::fs::write(dir.path().join("k.bin"), &changed).unwrap();
    let server = start(study(10_000, vec![]), MediaCatalog::load(dir.path()).unwrap(), Box::new(NullLog)).await;
    let (_, copy, _) = get(&format!("{}/media/copy.bin", server.base_url()), &[]).await;
    let (_, edited, _) = get(&format!("{}/media/k.bin", server.base_url()), &[]).await;
    assert_eq!(header(&copy, "etag"), Some(expected.as_str()));
    assert_ne!(header(&edited, "etag"), Some(expected.as_str()));
    server.shutdown().await;
}

#[tokio::test]
async fn manifest_resolves_urls_and_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(study(10_000, vec![]), media_dir(dir.path()), Box::new(NullLog)).await;
    let (status, headers, body) = get(&format!("{}/manifest/desk", server.base_url()), &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert!(header(&headers, "content-type").unwrap().starts_with("application/json"));
    let m: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let video_url = m["video"]["url"].as_str().unwrap();
    assert_eq!(video_url, format!("{}/media/video.mp4", server.base_url()));
    assert_eq!(m["video"]["sha256"], sha256sum(&dir.path().join("video.mp4")));
    assert_eq!(m["video"]["projection"], "equirectangular");
    assert_eq!(m["video"]["duration_ms"], 10_000);
    assert_eq!(m["audio"][0]["sha256"], sha256sum(&dir.path().join("narration.wav")));
    assert_eq!(m["audio"][0]["mode"], "mono");

    // the advertised URL serves the advertised bytes
    let (status, h, bytes) = get(video_url, &[]).await;
    assert_eq!((status, bytes.len()), (StatusCode::OK, 1 << 20));
    assert_eq!(header(&h, "etag").unwrap().trim_matches('"'), m["video"]["sha256"]);

    assert_eq!(get(&format!("{}/manifest/other", server.base_url()), &[]).await.0, StatusCode::NOT_FOUND);
    server.shutdown().await;
}

#[tokio::test]
async fn missing_media_refuses_to_start() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("video.mp4"), b"x").unwrap();
    let opts = study360::ServeOptions::new(study(1000, vec![]), MediaCatalog::load(dir.path()).unwrap(), Box::new(NullLog));
    match study360::serve(opts).await {
        Err(study360::ServeError::MissingMedia(m)) => assert_eq!(m.0, "narration.wav"),
        other => panic!("expected missing media, got {:?}", other.map(|s| s.http_addr)),
    }
}
