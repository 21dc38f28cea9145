use std::sync::Arc;

use ei_transport::{
    Backend, LocalStore, ObjectStore, ObjectUri, StoreRouter, TransportError, UnavailableStore,
};

#[test]
fn put_get_round_trip_with_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::new(dir.path());
    let receipt = store.put("ei", "a/b/hello.bin", b"hello").unwrap();
    assert_eq!(receipt.uri.to_string(), "local://ei/a/b/hello.bin");
    assert_eq!(receipt.bytes, 5);
    assert_eq!(receipt.crc32, 0x3610_A686); // CRC-32 of "hello"
    assert_eq!(store.get("ei", "a/b/hello.bin").unwrap(), b"hello");
}

#[test]
fn put_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::new(dir.path());
    store.put("ei", "k", b"one").unwrap();
    match store.put("ei", "k", b"two") {
        Err(TransportError::KeyExists { uri }) => assert_eq!(uri, "local://ei/k"),
        other => panic!("expected KeyExists, got {other:?}"),
    }
    // Original object is untouched.
    assert_eq!(store.get("ei", "k").unwrap(), b"one");
}

#[test]
fn missing_objects_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::new(dir.path());
    assert!(matches!(
        store.get("ei", "absent"),
        Err(TransportError::NotFound { .. })
    ));
    assert!(matches!(
        store.delete("ei", "absent"),
        Err(TransportError::NotFound { .. })
    ));
    store.put("ei", "k", b"x").unwrap();
    store.delete("ei", "k").unwrap();
    assert!(matches!(
        store.get("ei", "k"),
        Err(TransportError::NotFound { .. })
    ));
}

#[test]
fn listing_is_prefix_filtered_and_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::new(dir.path());
    for key in ["ei/ds1/b.spb", "ei/ds1/a.spb", "ei/ds2/c.spb", "other/x"] {
        store.put("bkt", key, b"payload").unwrap();
    }
    let keys = store.list("bkt", "ei/ds1/").unwrap();
    assert_eq!(keys, vec!["ei/ds1/a.spb", "ei/ds1/b.spb"]);
    let all = store.list("bkt", "").unwrap();
    assert_eq!(all.len(), 4);
    let mut sorted = all.clone();
    sorted.sort();
    assert_eq!(all, sorted);
    assert!(store.list("bkt", "nothing/").unwrap().is_empty());
    assert!(store.list("empty-bucket", "").unwrap().is_empty());
}

#[test]
fn traversal_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::new(dir.path());
    for key in ["../escape", "/абс", "/abs", "a/../b", "", "a/"] {
        assert!(
            matches!(store.put("ei", key, b"x"), Err(TransportError::InvalidKey { .. })),
            "accepted {key:?}"
        );
    }
    assert!(store.put("a/b", "k", b"x").is_err());
}

#[test]
fn router_falls_back_when_primary_is_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let router = StoreRouter::new(
        Arc::new(UnavailableStore::new(Backend::Local)),
        Some(Arc::new(LocalStore::new_fallback(dir.path()))),
    );
    let receipt = router.put_new("ei", "ds/1.spb", b"bytes").unwrap();
    assert_eq!(receipt.uri.backend, Backend::Fallback);
    assert_eq!(receipt.uri.to_string(), "fallback://ei/ds/1.spb");
    // Reads route by the backend recorded in the URI.
    assert_eq!(router.get(&receipt.uri).unwrap(), b"bytes");
}

#[test]
fn router_without_fallback_propagates_primary_failure() {
    let router = StoreRouter::new(Arc::new(UnavailableStore::new(Backend::Local)), None);
    assert!(matches!(
        router.put_new("ei", "k", b"x"),
        Err(TransportError::BackendUnavailable { .. })
    ));
}

#[test]
fn router_prefers_healthy_primary() {
    let p = tempfile::tempdir().unwrap();
    let f = tempfile::tempdir().unwrap();
    let router = StoreRouter::new(
        Arc::new(LocalStore::new(p.path())),
        Some(Arc::new(LocalStore::new_fallback(f.path()))),
    );
    let receipt = router.put_new("ei", "k", b"x").unwrap();
    assert_eq!(receipt.uri.backend, Backend::Local);
    // KeyExists is not an availability failure: no fallback write happens.
    assert!(matches!(
        router.put_new("ei", "k", b"y"),
        Err(TransportError::KeyExists { .. })
    ));
    let fallback_uri = ObjectUri::new(Backend::Fallback, "ei", "k");
    assert!(matches!(
        router.get(&fallback_uri),
        Err(TransportError::NotFound { .. })
    ));
}

#[test]
fn list_through_router_returns_uris() {
    let dir = tempfile::tempdir().unwrap();
    let router = StoreRouter::local_only(dir.path());
    router.put_new("ei", "ds/1.spb", b"a").unwrap();
    router.put_new("ei", "ds/2.spb", b"b").unwrap();
    let prefix = ObjectUri::new(Backend::Local, "ei", "ds/");
    let uris: Vec<String> = router
        .list(&prefix)
        .unwrap()
        .into_iter()
        .map(|u| u.to_string())
        .collect();
    assert_eq!(uris, vec!["local://ei/ds/1.spb", "local://ei/ds/2.spb"]);
}
