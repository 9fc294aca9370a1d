#![no_main]

use libfuzzer_sys::fuzz_target;
use mastery_service::auth::{bearer, Authenticator, TokenStore};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = bearer(text);
    let Ok(store) = TokenStore::parse(text) else { return };
    let mut count = 0;
    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("");
        if let Some(token) = content.split_whitespace().next() {
            assert!(store.authenticate(token).is_some());
            count += 1;
        }
    }
    assert_eq!(store.len(), count);
});
