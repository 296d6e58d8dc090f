#![no_main]

use flexcast::grid_data::TimeGrid;
use flexcast::signals::{parse_signal_series, SignalKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for kind in [SignalKind::DayAheadPrice, SignalKind::Mef] {
        let Ok(series) = parse_signal_series(data, kind) else { continue };
        let Some(&(first, _)) = series.points().first() else { continue };
        // Align onto the grid whose first step is the series start.
        let grid = TimeGrid::for_sample_day(first.date().succ_opt().unwrap_or(first.date()));
        if let Ok(signal) = series.align(&grid) {
            assert_eq!(signal.len(), grid.n_steps());
        }
    }
});
