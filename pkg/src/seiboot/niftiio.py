"""Volumetric image I/O (NIfTI-1), covariate tables, and result files.

The NIfTI-1 reader/writer speaks the single-file variant (magic ``n+1``,
348-byte header, payload at byte 352) for int16, float32, and float64
payloads, optionally gzip-compressed.  Written gzip members carry a zero
mtime so output files are byte-identical across runs.
"""

import csv
import gzip
import json
import struct
from dataclasses import dataclass

import numpy as np


class NiftiError(Exception):
    """Base class for NIfTI format errors."""


class NotNifti1Error(NiftiError):
    """File is not a single-file NIfTI-1 image."""


class UnsupportedDatatypeError(NiftiError):
    """Datatype code outside the supported int16/float32/float64 set."""


class TruncatedPayloadError(NiftiError):
    """Payload shorter than the header-declared extent."""


class CovariateError(ValueError):
    """Malformed covariate table."""


# (name, struct code, count); offsets follow the fixed NIfTI-1 layout.
_HEADER_FIELDS = [
    ("sizeof_hdr", "i", 1),
    ("data_type", "10s", 1),
    ("db_name", "18s", 1),
    ("extents", "i", 1),
    ("session_error", "h", 1),
    ("regular", "b", 1),
    ("dim_info", "b", 1),
    ("dim", "h", 8),
    ("intent_p1", "f", 1),
    ("intent_p2", "f", 1),
    ("intent_p3", "f", 1),
    ("intent_code", "h", 1),
    ("datatype", "h", 1),
    ("bitpix", "h", 1),
    ("slice_start", "h", 1),
    ("pixdim", "f", 8),
    ("vox_offset", "f", 1),
    ("scl_slope", "f", 1),
    ("scl_inter", "f", 1),
    ("slice_end", "h", 1),
    ("slice_code", "b", 1),
    ("xyzt_units", "b", 1),
    ("cal_max", "f", 1),
    ("cal_min", "f", 1),
    ("slice_duration", "f", 1),
    ("toffset", "f", 1),
    ("glmax", "i", 1),
    ("glmin", "i", 1),
    ("descrip", "80s", 1),
    ("aux_file", "24s", 1),
    ("qform_code", "h", 1),
    ("sform_code", "h", 1),
    ("quatern_b", "f", 1),
    ("quatern_c", "f", 1),
    ("quatern_d", "f", 1),
    ("qoffset_x", "f", 1),
    ("qoffset_y", "f", 1),
    ("qoffset_z", "f", 1),
    ("srow_x", "f", 4),
    ("srow_y", "f", 4),
    ("srow_z", "f", 4),
    ("intent_name", "16s", 1),
    ("magic", "4s", 1),
]

_HEADER_STRUCT = "".join(
    code if count == 1 else f"{count}{code}" for _, code, count in _HEADER_FIELDS
)

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"

_DTYPE_BY_CODE = {4: np.dtype(np.int16), 16: np.dtype(np.float32), 64: np.dtype(np.float64)}
_CODE_BY_DTYPE = {dt: code for code, dt in _DTYPE_BY_CODE.items()}


def _pack_header(fields, byteorder="<"):
    values = []
    for name, _, count in _HEADER_FIELDS:
        value = fields[name]
        if count == 1:
            values.append(value)
        else:
            values.extend(value)
    return struct.pack(byteorder + _HEADER_STRUCT, *values)


def _unpack_header(blob, byteorder):
    raw = struct.unpack(byteorder + _HEADER_STRUCT, blob)
    fields = {}
    pos = 0
    for name, _, count in _HEADER_FIELDS:
        fields[name] = raw[pos] if count == 1 else tuple(raw[pos : pos + count])
        pos += count
    return fields


@dataclass
class VolumeFile:
    """In-memory volume: data array plus voxel-to-world affine."""

    data: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.affine = np.asarray(self.affine, dtype=float)
        if self.affine.shape != (4, 4) or abs(np.linalg.det(self.affine)) < 1e-12:
            raise ValueError("affine must be an invertible 4x4 matrix")

    @property
    def voxel_size(self):
        return tuple(np.sqrt((self.affine[:3, :3] ** 2).sum(axis=0)))


def _open_read(path):
    with open(path, "rb") as raw:
        magic = raw.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _open_write(path):
    if str(path).endswith(".gz"):
        # mtime=0 keeps repeated writes byte-identical.
        return gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)
    return open(path, "wb")


def _affine_from_header(fields):
    if fields["sform_code"] > 0:
        affine = np.eye(4)
        affine[0, :] = fields["srow_x"]
        affine[1, :] = fields["srow_y"]
        affine[2, :] = fields["srow_z"]
        return affine
    pixdim = fields["pixdim"]
    if fields["qform_code"] > 0:
        b, c, d = fields["quatern_b"], fields["quatern_c"], fields["quatern_d"]
        a2 = max(1.0 - (b * b + c * c + d * d), 0.0)
        a = np.sqrt(a2)
        rot = np.array(
            [
                [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
                [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
                [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
            ]
        )
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        scales = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
        affine = np.eye(4)
        affine[:3, :3] = rot * scales
        affine[:3, 3] = (fields["qoffset_x"], fields["qoffset_y"], fields["qoffset_z"])
        return affine
    return np.diag([pixdim[1] or 1.0, pixdim[2] or 1.0, pixdim[3] or 1.0, 1.0])


def read_nifti(path):
    """Read a single-file NIfTI-1 volume.

    Applies scl_slope/scl_inter when the slope is nonzero (and not the
    identity scaling), promoting the payload to float64.  Raises
    NotNifti1Error, UnsupportedDatatypeError, or TruncatedPayloadError for
    the corresponding malformations.
    """
    with _open_read(path) as f:
        blob = f.read(HEADER_SIZE)
        if len(blob) < HEADER_SIZE:
            raise NotNifti1Error(f"not NIfTI-1: file shorter than header ({path})")
        byteorder = None
        for candidate in ("<", ">"):
            if struct.unpack(candidate + "i", blob[:4])[0] == HEADER_SIZE:
                byteorder = candidate
                break
        if byteorder is None:
            raise NotNifti1Error(f"not NIfTI-1: sizeof_hdr != 348 ({path})")
        fields = _unpack_header(blob, byteorder)
        if fields["magic"] != MAGIC_SINGLE:
            raise NotNifti1Error(f"not NIfTI-1: bad magic {fields['magic']!r} ({path})")
        try:
            dtype = _DTYPE_BY_CODE[fields["datatype"]].newbyteorder(byteorder)
        except KeyError:
            raise UnsupportedDatatypeError(
                f"unsupported datatype code {fields['datatype']} ({path})"
            ) from None
        ndim = fields["dim"][0]
        if not 1 <= ndim <= 7:
            raise NotNifti1Error(f"not NIfTI-1: dim[0] = {ndim} ({path})")
        shape = tuple(int(d) for d in fields["dim"][1 : 1 + ndim])
        if any(d < 1 for d in shape):
            raise NotNifti1Error(f"not NIfTI-1: non-positive dim in {shape} ({path})")

        vox_offset = int(fields["vox_offset"])
        if vox_offset < HEADER_SIZE:
            raise NotNifti1Error(f"not NIfTI-1: vox_offset {vox_offset} < 348 ({path})")
        f.read(vox_offset - HEADER_SIZE)
        n_bytes = int(np.prod(shape)) * dtype.itemsize
        payload = f.read(n_bytes)
        if len(payload) < n_bytes:
            raise TruncatedPayloadError(
                f"payload truncated: expected {n_bytes} bytes, got {len(payload)} ({path})"
            )

    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    slope, inter = float(fields["scl_slope"]), float(fields["scl_inter"])
    if slope != 0.0 and not (slope == 1.0 and inter == 0.0):
        data = data.astype(np.float64) * slope + inter
    else:
        data = data.astype(dtype.newbyteorder("="))
    return VolumeFile(data=data, affine=_affine_from_header(fields))


def write_nifti(vol, path, dtype=None, scl_slope=None, scl_inter=None):
    """Write a single-file NIfTI-1 volume (gzip when the path ends in .gz).

    ``dtype`` defaults to the array's dtype and must be int16, float32, or
    float64.  When ``scl_slope`` is given the array is written as the raw
    payload and the scaling is recorded in the header for readers to apply.
    """
    data = np.asarray(vol.data)
    if data.ndim not in (3, 4):
        raise ValueError(f"can only write 3D or 4D volumes, got {data.ndim}D")
    dtype = np.dtype(dtype) if dtype is not None else data.dtype
    if dtype not in _CODE_BY_DTYPE:
        raise UnsupportedDatatypeError(f"unsupported datatype {dtype}")
    payload = np.asfortranarray(data.astype(dtype.newbyteorder("<"), copy=False))

    affine = np.asarray(vol.affine, dtype=float)
    voxel_size = np.sqrt((affine[:3, :3] ** 2).sum(axis=0))
    dim = [data.ndim, *data.shape] + [1] * (7 - data.ndim)
    pixdim = [1.0, *voxel_size, 0.0, 0.0, 0.0, 0.0]

    fields = {name: (0,) * count if count > 1 else 0 for name, code, count in _HEADER_FIELDS}
    fields.update(
        sizeof_hdr=HEADER_SIZE,
        data_type=b"",
        db_name=b"",
        regular=ord("r"),
        dim=tuple(dim),
        datatype=_CODE_BY_DTYPE[dtype],
        bitpix=dtype.itemsize * 8,
        pixdim=tuple(pixdim),
        vox_offset=float(VOX_OFFSET),
        scl_slope=float(scl_slope) if scl_slope is not None else 0.0,
        scl_inter=float(scl_inter) if scl_inter is not None else 0.0,
        descrip=b"",
        aux_file=b"",
        qform_code=0,
        sform_code=2,
        srow_x=tuple(affine[0]),
        srow_y=tuple(affine[1]),
        srow_z=tuple(affine[2]),
        intent_name=b"",
        magic=MAGIC_SINGLE,
    )
    header = _pack_header(fields)
    assert len(header) == HEADER_SIZE

    with _open_write(path) as f:
        f.write(header)
        f.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
        f.write(payload.tobytes(order="F"))


@dataclass
class CovariateTable:
    """Subject id column plus named numeric columns, in file row order."""

    ids: list
    names: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.ids), len(self.names)):
            raise CovariateError("covariate value matrix does not match ids/names")

    @property
    def n(self):
        return len(self.ids)

    def column(self, name):
        try:
            j = self.names.index(name)
        except ValueError:
            raise CovariateError(f"column '{name}' not in covariate table") from None
        return self.values[:, j]


def read_covariates(path):
    """Read a CSV covariate table: header row, first column is the id.

    All non-id cells parse as 64-bit floats.  Missing values, non-numeric
    cells, and duplicate ids are errors naming the row and column.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or len(rows[0]) < 1:
        raise CovariateError(f"covariate file is empty: {path}")
    names = rows[0][1:]
    ids, data = [], []
    seen = set()
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != len(names) + 1:
            column = names[len(row) - 1] if len(row) - 1 < len(names) else "<extra>"
            raise CovariateError(f"missing value at row {r}, column '{column}'")
        subject = row[0]
        if subject in seen:
            raise CovariateError(f"duplicate id '{subject}' at row {r}")
        seen.add(subject)
        parsed = []
        for name, cell in zip(names, row[1:]):
            if cell.strip() == "":
                raise CovariateError(f"missing value at row {r}, column '{name}'")
            try:
                parsed.append(float(cell))
            except ValueError:
                raise CovariateError(
                    f"non-numeric value {cell!r} at row {r}, column '{name}'"
                ) from None
        ids.append(subject)
        data.append(parsed)
    if not ids:
        raise CovariateError(f"covariate file has no data rows: {path}")
    return CovariateTable(ids=ids, names=names, values=np.asarray(data, dtype=float))


def write_covariates(table, path):
    """Write a covariate table as CSV with full float round-trip precision."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", *table.names])
        for i, subject in enumerate(table.ids):
            writer.writerow([subject, *(repr(float(v)) for v in table.values[i])])


def load_outcomes(path, mask):
    """Load an n-by-V outcome matrix from a 4D NIfTI or a text list of 3D files.

    A ``.txt`` path is treated as one NIfTI path per line (relative paths
    resolve against the list file's directory).
    """
    import os

    if str(path).endswith(".txt"):
        base = os.path.dirname(os.path.abspath(path))
        with open(path) as f:
            entries = [line.strip() for line in f if line.strip()]
        if not entries:
            raise ValueError(f"subject list is empty: {path}")
        rows = []
        for entry in entries:
            vol = read_nifti(entry if os.path.isabs(entry) else os.path.join(base, entry))
            if vol.data.shape != mask.dims:
                raise ValueError(
                    f"volume {entry} has shape {vol.data.shape}, mask is {mask.dims}"
                )
            rows.append(vol.data[mask.inclusion])
        return np.asarray(rows, dtype=float)
    vol = read_nifti(path)
    if vol.data.ndim != 4:
        raise ValueError(f"expected a 4D volume at {path}, got {vol.data.ndim}D")
    if vol.data.shape[:3] != mask.dims:
        raise ValueError(f"volume {path} has shape {vol.data.shape[:3]}, mask is {mask.dims}")
    return np.ascontiguousarray(vol.data[mask.inclusion].T.astype(float))


def write_results(cluster_table, stat_image, label_image, mask, path_prefix):
    """Write cluster records plus georeferenced stat and label volumes.

    Produces ``<prefix>_clusters.jsonl`` (a header line then one record per
    cluster), ``<prefix>_stat.nii.gz``, and ``<prefix>_labels.nii.gz``.
    Returns the mapping of outputs written.
    """
    labels = np.asarray(label_image)
    if labels.shape != (mask.n_voxels,):
        raise ValueError("label image must be an in-mask vector")
    if labels.max(initial=0) > np.iinfo(np.int16).max:
        raise ValueError("too many clusters for an int16 label map")

    records_path = f"{path_prefix}_clusters.jsonl"
    stat_path = f"{path_prefix}_stat.nii.gz"
    labels_path = f"{path_prefix}_labels.nii.gz"

    with open(records_path, "w") as f:
        header = {
            "type": "header",
            "z0": cluster_table.z0,
            "connectivity": cluster_table.connectivity,
            "n_clusters": len(cluster_table),
            "voxel_volume_mm3": mask.voxel_volume_mm3,
        }
        f.write(json.dumps(header) + "\n")
        for rec in cluster_table:
            p_value = None if rec.p_value is None else float(f"{rec.p_value:.6g}")
            f.write(
                json.dumps(
                    {
                        "type": "cluster",
                        "label": rec.label,
                        "size_voxels": rec.size_voxels,
                        "extent_mm3": rec.extent_mm3,
                        "peak_value": rec.peak_value,
                        "peak_site": list(rec.peak_site),
                        "p_value": p_value,
                    }
                )
                + "\n"
            )

    values = stat_image.values if hasattr(stat_image, "values") else np.asarray(stat_image)
    stat_vol = VolumeFile(
        data=mask.to_volume(values.astype(np.float32)), affine=mask.affine
    )
    write_nifti(stat_vol, stat_path, dtype=np.float32)
    label_vol = VolumeFile(
        data=mask.to_volume(labels.astype(np.int16), fill=np.int16(0)), affine=mask.affine
    )
    write_nifti(label_vol, labels_path, dtype=np.int16)
    return {"clusters": records_path, "stat": stat_path, "labels": labels_path}


def read_cluster_records(path):
    """Read a clusters.jsonl file back as (header dict, list of record dicts)."""
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError(f"malformed cluster records file: {path}")
    return lines[0], lines[1:]
