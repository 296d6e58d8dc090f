#![no_main]

use flexcast::sweep_harness::ResultTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = ResultTable::read_csv(data) else { return };
    let mut first = Vec::new();
    table.write_csv(&mut first).unwrap();
    let again = ResultTable::read_csv(first.as_slice()).expect("written table reads back");
    let mut second = Vec::new();
    again.write_csv(&mut second).unwrap();
    assert_eq!(first, second);
});
