#![no_main]

use libfuzzer_sys::fuzz_target;
use photodet_core::artifact::extract_header;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((header, offset)) = extract_header(text) {
        assert!(offset <= text.len());
        let mut buf = Vec::new();
        header.write(&mut buf).unwrap();
        let written = String::from_utf8(buf).unwrap();
        let (back, end) = extract_header(&written).expect("written header parses");
        assert_eq!(back, header);
        assert_eq!(end, written.len());
    }
});
