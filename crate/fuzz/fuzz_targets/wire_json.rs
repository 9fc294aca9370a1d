#![no_main]

use libfuzzer_sys::fuzz_target;
use mastery_core::planning::CourseSchedule;
use mastery_core::queue::GradingSheet;
use mastery_core::CourseCatalog;
use mastery_service::wire::{CloseSessionBody, CorrectionBody, OpenSessionBody, RejectPitchBody, SubmitBody};

fn parse<T: serde::de::DeserializeOwned>(data: &[u8]) -> Option<T> {
    serde_json::from_slice(data).ok()
}

fuzz_target!(|data: &[u8]| {
    let _ = parse::<SubmitBody>(data);
    let _ = parse::<RejectPitchBody>(data);
    let _ = parse::<CorrectionBody>(data);
    let _ = parse::<OpenSessionBody>(data);
    let _ = parse::<CloseSessionBody>(data);
    let _ = parse::<GradingSheet>(data);
    if let Some(catalog) = parse::<CourseCatalog>(data) {
        let _ = catalog.validate();
    }
    if let Some(schedule) = parse::<CourseSchedule>(data) {
        let _ = schedule.validate();
    }
});
