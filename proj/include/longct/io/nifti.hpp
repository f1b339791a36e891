#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "longct/core/volume.hpp"

namespace longct {

namespace nifti {

// NIfTI-1 datatype codes.
enum : int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
};

#pragma pack(push, 1)
struct Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

inline Header make_header(const GridGeometry& g, int16_t dtype, int16_t bitpix,
                          int ncomp = 1) {
    Header h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = ncomp > 1 ? 5 : 3;
    h.dim[1] = static_cast<int16_t>(g.shape[0]);
    h.dim[2] = static_cast<int16_t>(g.shape[1]);
    h.dim[3] = static_cast<int16_t>(g.shape[2]);
    h.dim[4] = 1;
    h.dim[5] = static_cast<int16_t>(ncomp > 1 ? ncomp : 1);
    h.dim[6] = h.dim[7] = 1;
    if (ncomp > 1) h.intent_code = 1007;  // NIFTI_INTENT_VECTOR
    h.datatype = dtype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(g.spacing.x);
    h.pixdim[2] = static_cast<float>(g.spacing.y);
    h.pixdim[3] = static_cast<float>(g.spacing.z);
    h.pixdim[4] = h.pixdim[5] = h.pixdim[6] = h.pixdim[7] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2;  // millimetres
    std::strncpy(h.descrip, "longct", sizeof(h.descrip) - 1);
    h.qform_code = 0;
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(g.spacing.x);
    h.srow_x[3] = static_cast<float>(g.origin.x);
    h.srow_y[1] = static_cast<float>(g.spacing.y);
    h.srow_y[3] = static_cast<float>(g.origin.y);
    h.srow_z[2] = static_cast<float>(g.spacing.z);
    h.srow_z[3] = static_cast<float>(g.origin.z);
    h.magic[0] = 'n';
    h.magic[1] = '+';
    h.magic[2] = '1';
    h.magic[3] = '\0';
    return h;
}

inline void write_file(const std::string& path, const Header& h,
                       const void* data, size_t nbytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    const char ext[4] = {0, 0, 0, 0};  // no header extensions
    out.write(ext, 4);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(nbytes));
    if (!out) throw Error("write failed: " + path);
}

struct Raw {
    Header header;
    GridGeometry geom;
    int ncomp = 1;
    std::vector<char> bytes;
};

inline Raw read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open NIfTI file: " + path);
    Raw r;
    in.read(reinterpret_cast<char*>(&r.header), sizeof(Header));
    if (!in) throw Error("truncated NIfTI header: " + path);
    const Header& h = r.header;
    if (h.sizeof_hdr != 348)
        throw Error("unsupported NIfTI header (byte order or format): " + path);
    if (std::strncmp(h.magic, "n+1", 3) != 0)
        throw Error("not a single-file NIfTI-1 volume: " + path);
    if (h.dim[0] < 3)
        throw Error("expected a 3D volume: " + path);
    if (h.dim[0] >= 4 && h.dim[4] > 1)
        throw Error("time series volumes are not supported: " + path);
    r.ncomp = (h.dim[0] >= 5 && h.dim[5] > 1) ? h.dim[5] : 1;
    r.geom.shape = {h.dim[1], h.dim[2], h.dim[3]};
    r.geom.spacing = {h.pixdim[1], h.pixdim[2], h.pixdim[3]};
    if (h.sform_code > 0) {
        // Only axis-aligned, positively oriented grids are supported.
        if (h.srow_x[1] != 0 || h.srow_x[2] != 0 || h.srow_y[0] != 0 ||
            h.srow_y[2] != 0 || h.srow_z[0] != 0 || h.srow_z[1] != 0)
            throw Error("oblique NIfTI orientations are not supported: " + path);
        r.geom.spacing = {std::fabs(h.srow_x[0]), std::fabs(h.srow_y[1]),
                          std::fabs(h.srow_z[2])};
        r.geom.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
    } else if (h.qform_code > 0) {
        r.geom.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
    }
    r.geom.validate();
    const size_t nvox = static_cast<size_t>(r.geom.voxels()) * r.ncomp;
    const size_t nbytes = nvox * static_cast<size_t>(h.bitpix / 8);
    in.seekg(static_cast<std::streamoff>(h.vox_offset), std::ios::beg);
    r.bytes.resize(nbytes);
    in.read(r.bytes.data(), static_cast<std::streamsize>(nbytes));
    if (!in) throw Error("truncated NIfTI data: " + path);
    return r;
}

template <typename T>
void convert_to_float(const std::vector<char>& bytes, std::vector<float>& out) {
    const T* p = reinterpret_cast<const T*>(bytes.data());
    const size_t n = bytes.size() / sizeof(T);
    out.resize(n);
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(p[i]);
}

}  // namespace nifti

enum class VolumeDType { Float32, Int16 };

/// Write a scalar volume as single-file NIfTI-1 (.nii). HU volumes are
/// normally written as int16, normalized ones as float32.
inline void save_volume(const std::string& path, const Volume3D& vol,
                        VolumeDType dtype = VolumeDType::Float32) {
    vol.validate();
    if (dtype == VolumeDType::Float32) {
        nifti::Header h = nifti::make_header(vol.geom, nifti::kFloat32, 32);
        nifti::write_file(path, h, vol.data.data(), vol.data.size() * 4);
    } else {
        std::vector<int16_t> q(vol.data.size());
        for (size_t i = 0; i < q.size(); ++i)
            q[i] = static_cast<int16_t>(std::lrintf(vol.data[i]));
        nifti::Header h = nifti::make_header(vol.geom, nifti::kInt16, 16);
        nifti::write_file(path, h, q.data(), q.size() * 2);
    }
}

inline Volume3D load_volume(const std::string& path) {
    nifti::Raw r = nifti::read_file(path);
    if (r.ncomp != 1) throw Error("expected a scalar volume: " + path);
    Volume3D vol;
    vol.geom = r.geom;
    switch (r.header.datatype) {
        case nifti::kUInt8: nifti::convert_to_float<uint8_t>(r.bytes, vol.data); break;
        case nifti::kInt8: nifti::convert_to_float<int8_t>(r.bytes, vol.data); break;
        case nifti::kInt16: nifti::convert_to_float<int16_t>(r.bytes, vol.data); break;
        case nifti::kInt32: nifti::convert_to_float<int32_t>(r.bytes, vol.data); break;
        case nifti::kFloat32: nifti::convert_to_float<float>(r.bytes, vol.data); break;
        case nifti::kFloat64: nifti::convert_to_float<double>(r.bytes, vol.data); break;
        default: throw Error("unsupported NIfTI datatype in " + path);
    }
    const float slope = r.header.scl_slope;
    const float inter = r.header.scl_inter;
    if (slope != 0.0f && (slope != 1.0f || inter != 0.0f))
        for (float& v : vol.data) v = v * slope + inter;
    return vol;
}

/// Label maps are stored with unsigned 8-bit voxels.
inline void save_labels(const std::string& path, const LabelVolume& lab) {
    lab.validate();
    nifti::Header h = nifti::make_header(lab.geom, nifti::kUInt8, 8);
    nifti::write_file(path, h, lab.labels.data(), lab.labels.size());
}

inline LabelVolume load_labels(const std::string& path) {
    nifti::Raw r = nifti::read_file(path);
    if (r.ncomp != 1) throw Error("expected a scalar label volume: " + path);
    LabelVolume lab;
    lab.geom = r.geom;
    const size_t n = static_cast<size_t>(r.geom.voxels());
    lab.labels.resize(n);
    auto take = [&](auto type_tag) {
        using T = decltype(type_tag);
        const T* p = reinterpret_cast<const T*>(r.bytes.data());
        for (size_t i = 0; i < n; ++i) {
            const auto v = static_cast<int64_t>(p[i]);
            if (v < 0 || v >= ClassMap::kNumClasses)
                throw Error("label outside 0..4 in " + path);
            lab.labels[i] = static_cast<uint8_t>(v);
        }
    };
    switch (r.header.datatype) {
        case nifti::kUInt8: take(uint8_t{}); break;
        case nifti::kInt8: take(int8_t{}); break;
        case nifti::kInt16: take(int16_t{}); break;
        case nifti::kInt32: take(int32_t{}); break;
        default: throw Error("unsupported label datatype in " + path);
    }
    return lab;
}

/// Signed 8-bit volume, used for progression maps (values -1/0/+1).
inline void save_int8(const std::string& path, const GridGeometry& geom,
                      const std::vector<int8_t>& values) {
    LONGCT_REQUIRE(values.size() == static_cast<size_t>(geom.voxels()),
                   "save_int8: size mismatch");
    nifti::Header h = nifti::make_header(geom, nifti::kInt8, 8);
    nifti::write_file(path, h, values.data(), values.size());
}

inline std::vector<int8_t> load_int8(const std::string& path, GridGeometry* geom) {
    nifti::Raw r = nifti::read_file(path);
    if (r.header.datatype != nifti::kInt8)
        throw Error("expected int8 volume: " + path);
    if (geom) *geom = r.geom;
    std::vector<int8_t> v(r.bytes.size());
    std::memcpy(v.data(), r.bytes.data(), r.bytes.size());
    return v;
}

/// Per-voxel 3-vector field (e.g. ground-truth displacements), stored as a
/// 5D NIfTI with vector intent; component index varies slowest.
inline void save_vector_field(const std::string& path, const GridGeometry& geom,
                              const std::vector<float>& field) {
    LONGCT_REQUIRE(field.size() == static_cast<size_t>(geom.voxels()) * 3,
                   "save_vector_field: size mismatch");
    nifti::Header h = nifti::make_header(geom, nifti::kFloat32, 32, 3);
    nifti::write_file(path, h, field.data(), field.size() * 4);
}

inline std::vector<float> load_vector_field(const std::string& path,
                                            GridGeometry* geom) {
    nifti::Raw r = nifti::read_file(path);
    if (r.ncomp != 3 || r.header.datatype != nifti::kFloat32)
        throw Error("expected a float32 3-vector field: " + path);
    if (geom) *geom = r.geom;
    std::vector<float> v(r.bytes.size() / 4);
    std::memcpy(v.data(), r.bytes.data(), r.bytes.size());
    return v;
}

}  // namespace longct
