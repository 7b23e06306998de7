#pragma once

// Coreset files: decoded samples in the dataset schema, plus a sidecar in the
// checkpoint container holding the continuous tensors (syn.scene 4M x 13,
// syn.instr M x 18, syn.action M x 2T).

#include <filesystem>
#include <vector>

#include "ftncfm/diffcore/checkpoint.hpp"
#include "ftncfm/representation/synthetic.hpp"
#include "ftncfm/toyworld/dataset_io.hpp"

namespace ftncfm::ncfm {

inline std::vector<toy::Sample> decode_coreset(std::span<const rep::SyntheticSample> syn, std::uint64_t first_id = 0) {
    std::vector<toy::Sample> out;
    for (std::size_t i = 0; i < syn.size(); ++i) out.push_back(rep::decode(syn[i], first_id + i));
    return out;
}

inline ParamVector sidecar_params(std::span<const rep::SyntheticSample> syn) {
    const rep::SyntheticBatch b = rep::stack(syn);
    diff::ParamLayout::Builder builder;
    builder.add("syn.scene", b.scene.rows(), b.scene.cols());
    builder.add("syn.instr", b.instr.rows(), b.instr.cols());
    builder.add("syn.action", b.action.rows(), b.action.cols());
    ParamVector p(builder.build());
    p.block(0) = b.scene;
    p.block(1) = b.instr;
    p.block(2) = b.action;
    return p;
}

inline std::vector<rep::SyntheticSample> from_sidecar(const ParamVector& p) {
    const auto& layout = *p.layout();
    if (layout.count() != 3 || layout.entry(0).name != "syn.scene" || layout.entry(1).name != "syn.instr" ||
        layout.entry(2).name != "syn.action")
        throw IoError("sidecar does not hold syn.scene, syn.instr, syn.action");
    rep::SyntheticBatch b{p.block(0), p.block(1), p.block(2)};
    if (b.scene.rows() != rep::kSlots * b.instr.rows() || b.scene.cols() != rep::kSceneFields ||
        b.instr.cols() != rep::kInstrDim || b.action.rows() != b.instr.rows())
        throw IoError("sidecar tensors have inconsistent shapes");
    return rep::unstack(b);
}

inline void export_coreset(std::span<const rep::SyntheticSample> syn, const std::filesystem::path& jsonl,
                           const std::filesystem::path& sidecar, std::uint64_t first_id = 0) {
    for (const auto& s : syn)
        if (!s.scene.allFinite() || !s.instr.allFinite() || !s.action.allFinite())
            throw ContractViolation("export_coreset: coreset holds non-finite values");
    toy::save_dataset(jsonl, decode_coreset(syn, first_id), false);
    ensure_parent(sidecar);
    diff::save_checkpoint(sidecar, sidecar_params(syn));
}

inline std::vector<rep::SyntheticSample> load_sidecar(const std::filesystem::path& sidecar) {
    return from_sidecar(diff::load_checkpoint(sidecar));
}

} // namespace ftncfm::ncfm
