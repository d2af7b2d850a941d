pub mod necessity;
pub mod onoff;
pub mod packing;
pub mod sufficiency;
pub mod svm;
