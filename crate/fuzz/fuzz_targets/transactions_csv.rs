#![no_main]

use flexcast::grid_data::{parse_transactions, write_transactions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(raws) = parse_transactions(data) else { return };
    let mut first = Vec::new();
    write_transactions(&mut first, &raws).unwrap();
    let again = parse_transactions(first.as_slice()).expect("written transactions parse");
    let mut second = Vec::new();
    write_transactions(&mut second, &again).unwrap();
    assert_eq!(first, second);
});
