#![no_main]

use libfuzzer_sys::fuzz_target;
use mastery_core::ledger::{decode, encode_line, replay};

fuzz_target!(|data: &[u8]| {
    let Ok(entries) = decode(data) else { return };
    let text: String = entries.iter().map(encode_line).collect();
    assert_eq!(decode(text.as_bytes()).expect("re-encoded log decodes"), entries);
    if let Ok(state) = replay(&entries) {
        assert_eq!(replay(&entries).unwrap().canonical_json(), state.canonical_json());
    }
});
