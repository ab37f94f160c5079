// Checkpoint format "ASPC": u32 version, config block, then a manifest of
// named tensors (name, shape, little-endian f64 data). Round trips are
// bit-exact.
#pragma once

#include <string>

#include "asp/error.hpp"
#include "asp/io_util.hpp"
#include "asp/model.hpp"

namespace asp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string checkpoint_bytes(const ModelParams& params) {
    std::string out;
    out += "ASPC";
    io::put_u32(out, kCheckpointVersion);
    const ModelConfig& c = params.config;
    io::put_u32(out, static_cast<std::uint32_t>(c.attr_count));
    io::put_u32(out, static_cast<std::uint32_t>(c.object_count));
    io::put_u32(out, static_cast<std::uint32_t>(c.word_dim));
    io::put_u32(out, static_cast<std::uint32_t>(c.image_dim));
    io::put_u32(out, static_cast<std::uint32_t>(c.attr_space_dim));
    io::put_u32(out, static_cast<std::uint32_t>(c.object_space_dim));
    io::put_u32(out, static_cast<std::uint32_t>(c.mlp_depth));
    io::put_u32(out, static_cast<std::uint32_t>(c.heads));
    io::put_u8(out, c.attention_residual ? 1 : 0);
    io::put_f64(out, c.temperature);
    io::put_f64(out, c.dropout_p);
    io::put_f64(out, c.layer_norm_eps);

    ModelParams& mutable_params = const_cast<ModelParams&>(params);
    auto named = mutable_params.named_parameters(true);
    io::put_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        io::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        io::put_u32(out, static_cast<std::uint32_t>(tensor->rank()));
        for (std::size_t d : tensor->shape()) io::put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : tensor->values()) io::put_f64(out, v);
    }
    return out;
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
    io::write_file(path, checkpoint_bytes(params));
}

inline ModelParams load_checkpoint_bytes(const std::string& blob) {
    io::Reader r(blob, ErrorCode::checkpoint_corrupt);
    if (r.bytes(4) != "ASPC") fail(ErrorCode::checkpoint_corrupt, "bad magic, expected ASPC");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        fail(ErrorCode::version_mismatch,
             "checkpoint version " + std::to_string(version) + ", expected " +
                 std::to_string(kCheckpointVersion));
    ModelConfig c;
    c.attr_count = r.u32();
    c.object_count = r.u32();
    c.word_dim = r.u32();
    c.image_dim = r.u32();
    c.attr_space_dim = r.u32();
    c.object_space_dim = r.u32();
    c.mlp_depth = r.u32();
    c.heads = r.u32();
    c.attention_residual = r.u8() != 0;
    c.temperature = r.f64();
    c.dropout_p = r.f64();
    c.layer_norm_eps = r.f64();
    c.validate();

    // build the parameter layout, then fill every tensor from the manifest
    Rng scratch(0);
    ModelParams params = init_model(c, Tensor::zeros({c.attr_count, c.word_dim}),
                                    Tensor::zeros({c.object_count, c.word_dim}), scratch);
    auto named = params.named_parameters(true);
    const std::uint32_t count = r.u32();
    if (count != named.size())
        fail(ErrorCode::checkpoint_corrupt, "manifest lists " + std::to_string(count) +
                                                " tensors, model needs " +
                                                std::to_string(named.size()));
    for (auto& [name, tensor] : named) {
        const std::uint32_t name_len = r.u32();
        const std::string got = r.bytes(name_len);
        if (got != name)
            fail(ErrorCode::checkpoint_corrupt,
                 "manifest entry '" + got + "' where '" + name + "' was expected");
        const std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
        if (shape != tensor->shape())
            fail(ErrorCode::checkpoint_corrupt, "tensor '" + name + "' has shape " +
                                                    detail::shape_str(shape) + ", expected " +
                                                    detail::shape_str(tensor->shape()));
        for (double& v : tensor->values()) v = r.f64();
    }
    if (!r.at_end())
        fail(ErrorCode::checkpoint_corrupt,
             std::to_string(r.remaining()) + " trailing bytes after manifest");
    return params;
}

inline ModelParams load_checkpoint(const std::string& path) {
    return load_checkpoint_bytes(io::read_file(path));
}

}  // namespace asp
