//! Slice ingestion: the DSEG file format, dataset manifests, the fixed
//! preprocessing pipeline and a synthetic phantom generator.

mod dseg;
mod manifest;
mod phantom;
mod preprocess;

pub use dseg::{
    decode_slice, encode_image, encode_mask, encode_slice, load_image, load_mask, load_slice, save_image, save_mask,
    save_slice, SliceData, DSEG_HEADER_LEN, DSEG_MAGIC, DSEG_VERSION, MAX_EXTENT,
};
pub use manifest::{
    load_dataset, parse_manifest, read_manifest, resolve, write_manifest, CaseEntry, DatasetManifest, MANIFEST_VERSION,
};
pub use phantom::{generate_phantom_dataset, phantom_case_id, phantom_records, phantom_slice, PhantomSlice, PhantomSpec};
pub use preprocess::{
    binarize_labels, is_empty_slice, normalize_slice, prepare_slice, resize_bilinear, resize_image, resize_mask,
    SliceRecord,
};
