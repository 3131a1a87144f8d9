#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "hyattn/feature_map.hpp"
#include "hyattn/recurrent.hpp"

// Flat little-endian binary blob + JSON sidecar, shared by feature maps and
// stream-session checkpoints.
namespace hyattn {

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian; raw scalar IO assumes a LE host");

namespace detail {

template <std::floating_point S>
void write_scalars(std::ofstream& out, const Tensor<S>& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              std::streamsize(t.size() * sizeof(S)));
}

template <std::floating_point S>
void read_scalars(std::ifstream& in, Tensor<S>& t) {
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(S)));
    if (!in) throw std::runtime_error("blob read: truncated file");
}

template <std::floating_point S>
constexpr const char* dtype_name() {
    return std::same_as<S, double> ? "float64" : "float32";
}

inline nlohmann::json load_sidecar(const std::string& base) {
    std::ifstream in(base + ".json");
    if (!in) throw std::runtime_error("cannot open sidecar " + base + ".json");
    nlohmann::json j;
    in >> j;
    return j;
}

} // namespace detail

template <std::floating_point S>
void save_feature_map(const FeatureMap<S>& fm, const std::string& base,
                      std::uint64_t seed = 0) {
    fm.validate();
    nlohmann::json j{{"D", fm.input_dim},
                     {"D_h", fm.hidden_dim},
                     {"D_e", fm.output_dim},
                     {"P", fm.degree},
                     {"nonneg_mode", to_string(fm.nonneg)},
                     {"activation", to_string(fm.activation)},
                     {"seed", seed},
                     {"dtype", detail::dtype_name<S>()}};
    std::ofstream side(base + ".json");
    side << j.dump(2) << "\n";
    std::ofstream bin(base + ".bin", std::ios::binary);
    if (!side || !bin) throw std::runtime_error("cannot write feature map " + base);
    detail::write_scalars(bin, fm.w1);
    detail::write_scalars(bin, fm.b1);
    detail::write_scalars(bin, fm.w2);
    detail::write_scalars(bin, fm.b2);
}

template <std::floating_point S>
FeatureMap<S> load_feature_map(const std::string& base) {
    const nlohmann::json j = detail::load_sidecar(base);
    if (j.at("dtype").get<std::string>() != detail::dtype_name<S>())
        throw std::runtime_error("feature map dtype mismatch in " + base);
    FeatureMap<S> fm;
    fm.input_dim = j.at("D").get<int>();
    fm.hidden_dim = j.at("D_h").get<int>();
    fm.output_dim = j.at("D_e").get<int>();
    fm.degree = j.at("P").get<int>();
    fm.nonneg = nonneg_from_string(j.at("nonneg_mode").get<std::string>());
    fm.activation = activation_from_string(j.at("activation").get<std::string>());
    fm.w1 = Tensor<S>({std::size_t(fm.input_dim), std::size_t(fm.hidden_dim)});
    fm.b1 = Tensor<S>({1, std::size_t(fm.hidden_dim)});
    fm.w2 = Tensor<S>({std::size_t(fm.hidden_dim), std::size_t(fm.output_dim)});
    fm.b2 = Tensor<S>({1, std::size_t(fm.output_dim)});
    std::ifstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open blob " + base + ".bin");
    detail::read_scalars(bin, fm.w1);
    detail::read_scalars(bin, fm.b1);
    detail::read_scalars(bin, fm.w2);
    detail::read_scalars(bin, fm.b2);
    fm.validate();
    return fm;
}

/// Writes (s, z, absorbed, cursor, overlap cache) per head; weights and maps
/// are not part of the checkpoint and must be supplied on resume.
template <std::floating_point S>
void save_checkpoint(const StreamSession<S>& session, const std::string& base) {
    nlohmann::json heads = nlohmann::json::array();
    for (std::size_t h = 0; h < session.states.size(); ++h) {
        heads.push_back({{"d_prime", session.states[h].value_state.rows()},
                         {"absorbed", session.states[h].absorbed},
                         {"cache_rows", session.cache_k[h].rows()}});
    }
    nlohmann::json j{{"T", session.layout.T},     {"H", session.layout.H},
                     {"W", session.layout.W},     {"D", session.layout.D},
                     {"Tc", session.layout.Tc},   {"To", session.layout.To},
                     {"cursor", session.cursor},  {"dtype", detail::dtype_name<S>()},
                     {"heads", heads}};
    std::ofstream side(base + ".json");
    side << j.dump(2) << "\n";
    std::ofstream bin(base + ".bin", std::ios::binary);
    if (!side || !bin) throw std::runtime_error("cannot write checkpoint " + base);
    for (std::size_t h = 0; h < session.states.size(); ++h) {
        detail::write_scalars(bin, session.states[h].value_state);
        detail::write_scalars(bin, session.states[h].norm_state);
        detail::write_scalars(bin, session.cache_k[h]);
        detail::write_scalars(bin, session.cache_v[h]);
    }
}

/// Restores checkpointed state into a freshly constructed session with the
/// same layout and head/map dimensions.
template <std::floating_point S>
void load_checkpoint(StreamSession<S>& session, const std::string& base) {
    const nlohmann::json j = detail::load_sidecar(base);
    if (j.at("dtype").get<std::string>() != detail::dtype_name<S>())
        throw std::runtime_error("checkpoint dtype mismatch in " + base);
    const ChunkLayout& L = session.layout;
    if (j.at("T") != L.T || j.at("H") != L.H || j.at("W") != L.W || j.at("D") != L.D ||
        j.at("Tc") != L.Tc || j.at("To") != L.To)
        throw std::runtime_error("checkpoint layout mismatch in " + base);
    const auto& heads = j.at("heads");
    if (heads.size() != session.states.size())
        throw std::runtime_error("checkpoint head count mismatch in " + base);

    std::ifstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open blob " + base + ".bin");
    session.cursor = j.at("cursor").get<int>();
    for (std::size_t h = 0; h < session.states.size(); ++h) {
        const std::size_t dp = heads[h].at("d_prime").get<std::size_t>();
        if (dp != session.states[h].value_state.rows())
            throw std::runtime_error("checkpoint feature dim mismatch in " + base);
        const std::size_t cache_rows = heads[h].at("cache_rows").get<std::size_t>();
        session.states[h].absorbed = heads[h].at("absorbed").get<std::size_t>();
        session.states[h].chunk_cursor = session.cursor;
        detail::read_scalars(bin, session.states[h].value_state);
        detail::read_scalars(bin, session.states[h].norm_state);
        session.cache_k[h] = Tensor<S>({cache_rows, std::size_t(L.D)});
        session.cache_v[h] = Tensor<S>({cache_rows, std::size_t(L.D)});
        detail::read_scalars(bin, session.cache_k[h]);
        detail::read_scalars(bin, session.cache_v[h]);
    }
}

} // namespace hyattn
