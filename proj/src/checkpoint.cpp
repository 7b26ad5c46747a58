// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace ecgchat::checkpoint {

namespace {

constexpr char kMagic[8] = {'E', 'C', 'G', 'C', 'K', 'P', 'T', '\0'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

const Matrix* Archive::find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return &m;
    return nullptr;
}

void save(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json header;
    header["config"] = archive.config;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, m] : archive.tensors) {
        header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(m.size()) * 8;
    }
    const std::string h = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    put_le(out, kArchiveVersion, 4);
    put_le(out, h.size(), 8);
    out += h;
    out.reserve(out.size() + offset);
    for (const auto& [name, m] : archive.tensors)
        for (Index i = 0; i < m.size(); ++i) put_le(out, std::bit_cast<std::uint64_t>(m.data()[i]), 8);

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw CheckpointError("cannot write " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Archive load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string in = ss.str();
    if (in.size() < 20 || in.compare(0, 8, std::string(kMagic, 8)) != 0)
        throw CheckpointError(path.string() + " is not a checkpoint archive");
    const auto version = get_le(in, 8, 4);
    if (version != kArchiveVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto hlen = get_le(in, 12, 8);
    if (in.size() < 20 + hlen) throw CheckpointError("truncated checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.substr(20, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    Archive archive;
    archive.config = header.value("config", nlohmann::json::object());
    const std::size_t base = 20 + hlen;
    for (const auto& t : header.at("tensors")) {
        const auto rows = t.at("rows").get<Index>();
        const auto cols = t.at("cols").get<Index>();
        const auto off = t.at("offset").get<std::uint64_t>();
        if (base + off + static_cast<std::uint64_t>(rows * cols) * 8 > in.size())
            throw CheckpointError("truncated tensor " + t.at("name").get<std::string>());
        Matrix m(rows, cols);
        for (Index i = 0; i < m.size(); ++i)
            m.data()[i] = std::bit_cast<double>(get_le(in, base + off + static_cast<std::size_t>(i) * 8, 8));
        archive.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    return archive;
}

}  // namespace ecgchat::checkpoint
