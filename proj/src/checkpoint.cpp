#include "mesen/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace mesen {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'S', 'E', 'N', 'C', 'K', '1'};

void write_u32(std::ostream& out, uint32_t x) { out.write(reinterpret_cast<const char*>(&x), 4); }
void write_u64(std::ostream& out, uint64_t x) { out.write(reinterpret_cast<const char*>(&x), 8); }
void write_f64(std::ostream& out, double x) { out.write(reinterpret_cast<const char*>(&x), 8); }

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& in) {
    uint32_t x;
    in.read(reinterpret_cast<char*>(&x), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated archive");
    return x;
}

uint64_t read_u64(std::istream& in) {
    uint64_t x;
    in.read(reinterpret_cast<char*>(&x), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated archive");
    return x;
}

double read_f64(std::istream& in) {
    double x;
    in.read(reinterpret_cast<char*>(&x), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated archive");
    return x;
}

std::string read_string(std::istream& in) {
    uint32_t len = read_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw std::runtime_error("checkpoint: truncated archive");
    return s;
}

void write_model(std::ostream& out, const LayeredModel& model) {
    auto blocks = const_cast<LayeredModel&>(model).blocks();
    write_u32(out, static_cast<uint32_t>(blocks.size()));
    for (Layer* layer : blocks) {
        write_string(out, layer->id());
        write_u32(out, static_cast<uint32_t>(layer->tensors().size()));
        for (const auto& t : layer->tensors()) {
            write_string(out, t.name);
            write_u32(out, static_cast<uint32_t>(t.dims.size()));
            for (int d : t.dims) write_u32(out, static_cast<uint32_t>(d));
            write_u64(out, t.w.size());
            out.write(reinterpret_cast<const char*>(t.w.data()),
                      static_cast<std::streamsize>(t.w.size() * sizeof(double)));
        }
    }
}

void read_model(std::istream& in, LayeredModel& model) {
    auto blocks = model.blocks();
    uint32_t layer_count = read_u32(in);
    if (layer_count != blocks.size())
        throw std::runtime_error("checkpoint: layer count mismatch (archive " +
                                 std::to_string(layer_count) + ", model " +
                                 std::to_string(blocks.size()) + ")");
    for (Layer* layer : blocks) {
        std::string id = read_string(in);
        if (id != layer->id())
            throw std::runtime_error("checkpoint: layer id mismatch (archive '" + id + "', model '" +
                                     layer->id() + "')");
        uint32_t tensor_count = read_u32(in);
        if (tensor_count != layer->tensors().size())
            throw std::runtime_error("checkpoint: tensor count mismatch in layer " + id);
        for (auto& t : layer->tensors()) {
            std::string name = read_string(in);
            if (name != t.name) throw std::runtime_error("checkpoint: tensor name mismatch in " + id);
            uint32_t ndims = read_u32(in);
            std::vector<int> dims(ndims);
            for (auto& d : dims) d = static_cast<int>(read_u32(in));
            if (dims != t.dims) throw std::runtime_error("checkpoint: tensor shape mismatch in " + id);
            uint64_t count = read_u64(in);
            if (count != t.w.size()) throw std::runtime_error("checkpoint: tensor size mismatch in " + id);
            in.read(reinterpret_cast<char*>(t.w.data()),
                    static_cast<std::streamsize>(count * sizeof(double)));
            if (!in) throw std::runtime_error("checkpoint: truncated tensor data in " + id);
        }
    }
}

void write_history(std::ostream& out, const std::vector<LossBreakdown>& history) {
    write_u64(out, history.size());
    for (const auto& row : history) {
        write_f64(out, row.l_cmf);
        write_f64(out, row.l_mpc);
        write_f64(out, row.l_pr);
        write_f64(out, row.delta);
        write_f64(out, row.l_pt);
        write_u32(out, static_cast<uint32_t>(row.per_direction.size()));
        for (const auto& [key, value] : row.per_direction) {
            write_string(out, key);
            write_f64(out, value);
        }
    }
}

std::vector<LossBreakdown> read_history(std::istream& in) {
    std::vector<LossBreakdown> history(read_u64(in));
    for (auto& row : history) {
        row.l_cmf = read_f64(in);
        row.l_mpc = read_f64(in);
        row.l_pr = read_f64(in);
        row.delta = read_f64(in);
        row.l_pt = read_f64(in);
        uint32_t dir_count = read_u32(in);
        for (uint32_t i = 0; i < dir_count; ++i) {
            std::string key = read_string(in);
            row.per_direction[key] = read_f64(in);
        }
    }
    return history;
}

// atomic write: temp file in the same directory, then rename
template <typename Writer>
void atomic_write(const std::string& path, Writer writer) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
        writer(out);
        if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::ifstream open_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: " + path + " is not a MESENCK1 archive");
    return in;
}

}  // namespace

int PretrainCheckpoint::modality_index(const std::string& id) const {
    for (size_t m = 0; m < modalities.size(); ++m)
        if (modalities[m] == id) return static_cast<int>(m);
    return -1;
}

void save_pretrain_checkpoint(const PretrainCheckpoint& ck, const std::string& path) {
    atomic_write(path, [&](std::ostream& out) {
        out.write(kMagic, 8);
        write_u32(out, 0);  // kind: pretrain
        write_string(out, ck.variant);
        write_string(out, serialize_config(ck.config));
        write_u32(out, static_cast<uint32_t>(ck.modalities.size()));
        for (size_t m = 0; m < ck.modalities.size(); ++m) {
            write_string(out, ck.modalities[m]);
            write_u32(out, static_cast<uint32_t>(ck.input_shapes[m].first));
            write_u32(out, static_cast<uint32_t>(ck.input_shapes[m].second));
        }
        for (const auto& enc : ck.encoders) write_model(out, enc);
        for (const auto& proj : ck.projectors) write_model(out, proj);
        write_model(out, ck.pseudo_head);
        write_history(out, ck.history);
    });
}

PretrainCheckpoint load_pretrain_checkpoint(const std::string& path) {
    std::ifstream in = open_archive(path);
    if (read_u32(in) != 0) throw std::runtime_error("checkpoint: " + path + " is not a pretrain archive");
    PretrainCheckpoint ck;
    ck.variant = read_string(in);
    ck.config = parse_config(read_string(in));
    uint32_t m_count = read_u32(in);
    for (uint32_t m = 0; m < m_count; ++m) {
        ck.modalities.push_back(read_string(in));
        int channels = static_cast<int>(read_u32(in));
        int steps = static_cast<int>(read_u32(in));
        ck.input_shapes.emplace_back(channels, steps);
    }
    for (uint32_t m = 0; m < m_count; ++m) {
        ck.encoders.emplace_back(ck.input_shapes[m].first, ck.input_shapes[m].second, ck.config, 0);
        read_model(in, ck.encoders.back());
    }
    for (uint32_t m = 0; m < m_count; ++m) {
        ck.projectors.emplace_back(ck.config.encoder_dim(), ck.config.feature_dim, 0);
        read_model(in, ck.projectors.back());
    }
    ck.pseudo_head = Head(ck.config.feature_dim, ck.config.class_count, 0);
    read_model(in, ck.pseudo_head);
    ck.history = read_history(in);
    return ck;
}

void save_unimodal_model(const UnimodalModel& model, const std::string& path) {
    atomic_write(path, [&](std::ostream& out) {
        out.write(kMagic, 8);
        write_u32(out, 1);  // kind: unimodal
        write_string(out, model.modality_id);
        write_string(out, serialize_config(model.config));
        write_u32(out, static_cast<uint32_t>(model.input_shape.first));
        write_u32(out, static_cast<uint32_t>(model.input_shape.second));
        write_model(out, model.encoder);
        write_model(out, model.head);
    });
}

UnimodalModel load_unimodal_model(const std::string& path) {
    std::ifstream in = open_archive(path);
    if (read_u32(in) != 1) throw std::runtime_error("checkpoint: " + path + " is not a unimodal archive");
    UnimodalModel model;
    model.modality_id = read_string(in);
    model.config = parse_config(read_string(in));
    model.input_shape.first = static_cast<int>(read_u32(in));
    model.input_shape.second = static_cast<int>(read_u32(in));
    model.encoder = Encoder(model.input_shape.first, model.input_shape.second, model.config, 0);
    read_model(in, model.encoder);
    model.head = Head(model.config.encoder_dim(), model.config.class_count, 0);
    read_model(in, model.head);
    return model;
}

void write_history_csv(const std::vector<LossBreakdown>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_history_csv: cannot write " + path);
    out << "step,l_cmf,l_mpc,l_pr,delta,l_pt\n";
    char buf[64];
    for (size_t i = 0; i < history.size(); ++i) {
        const auto& row = history[i];
        out << i;
        for (double x : {row.l_cmf, row.l_mpc, row.l_pr, row.delta, row.l_pt}) {
            std::snprintf(buf, sizeof(buf), "%.17g", x);
            out << ',' << buf;
        }
        out << '\n';
    }
}

}  // namespace mesen
