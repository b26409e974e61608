// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/rqdit.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "addse/rng.hpp"

namespace addse {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;

constexpr double kLayerNormEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

struct Linear {
    std::size_t w = 0;
    std::size_t b = 0;
    std::size_t in = 0;
    std::size_t out = 0;
};

struct BlockParams {
    Linear ada, q, k, v, o, m1, m2;
};

struct InputCache {
    Mat e, a1, s1;
};

struct BlockCache {
    Mat x, mod, n1, h1, q, k, v, o, attn, x1, n2, h2, m1, gt, gm, m;
    Eigen::VectorXd rstd1, rstd2;
    std::vector<Mat> probs;  // per head, tokens x group
};

struct StackCache {
    Mat c, sc;
    std::vector<BlockCache> blocks;
};

struct ForwardCache {
    std::size_t frames = 0;  // summed over the batch
    std::size_t frame_group = 0;
    std::size_t depth = 0;
    InputCache clean, noisy;
    StackCache frame_stack, depth_stack;
    bool frame_frozen = false;
    Mat g, ng, ah, sh;
    Eigen::VectorXd rstd_head;
};

Eigen::Map<const Mat> weight(const ParamStore& ps, const Linear& l) {
    return {ps.value(l.w).data(), static_cast<Eigen::Index>(l.in), static_cast<Eigen::Index>(l.out)};
}

Eigen::Map<const Row> bias(const ParamStore& ps, const Linear& l) {
    return {ps.value(l.b).data(), static_cast<Eigen::Index>(l.out)};
}

Mat linear(const ParamStore& ps, const Linear& l, const Mat& x) {
    Mat y = x * weight(ps, l);
    y.rowwise() += bias(ps, l);
    return y;
}

// Accumulates parameter gradients; returns dL/dx.
Mat linear_back(ParamStore& ps, const Linear& l, const Mat& x, const Mat& dy) {
    Eigen::Map<Mat> gw(ps.grad(l.w).data(), static_cast<Eigen::Index>(l.in), static_cast<Eigen::Index>(l.out));
    Eigen::Map<Row> gb(ps.grad(l.b).data(), static_cast<Eigen::Index>(l.out));
    gw.noalias() += x.transpose() * dy;
    gb += dy.colwise().sum();
    return dy * weight(ps, l).transpose();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat silu(const Mat& x) {
    return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

Mat silu_back(const Mat& x, const Mat& dy) {
    return dy.binaryExpr(x, [](double g, double v) {
        const double s = sigmoid(v);
        return g * s * (1.0 + v * (1.0 - s));
    });
}

Mat gelu_tanh(const Mat& x) {
    return x.unaryExpr([](double v) { return std::tanh(kGeluC * (v + 0.044715 * v * v * v)); });
}

Mat gelu_back(const Mat& x, const Mat& t, const Mat& dy) {
    Mat dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double th = t.data()[i];
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        dx.data()[i] = dy.data()[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
    return dx;
}

Mat layer_norm(const Mat& x, Eigen::VectorXd& rstd) {
    Mat y(x.rows(), x.cols());
    rstd.resize(x.rows());
    const double n = static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / n;
        const double var = (x.row(r).array() - mean).square().sum() / n;
        rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
        y.row(r) = (x.row(r).array() - mean) * rstd(r);
    }
    return y;
}

Mat layer_norm_back(const Mat& y, const Eigen::VectorXd& rstd, const Mat& dy) {
    Mat dx(y.rows(), y.cols());
    const double n = static_cast<double>(y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double mean_dy = dy.row(r).sum() / n;
        const double mean_dyy = dy.row(r).dot(y.row(r)) / n;
        dx.row(r) = rstd(r) * (dy.row(r).array() - mean_dy - y.row(r).array() * mean_dyy);
    }
    return dx;
}

// cos/sin of position * theta_d for positions 0..group-1, the same angles
// rope_apply uses.
struct RopeTable {
    Mat cos, sin;

    RopeTable(std::size_t group, std::size_t head_dim, double base)
        : cos(static_cast<Eigen::Index>(group), static_cast<Eigen::Index>(head_dim / 2)),
          sin(static_cast<Eigen::Index>(group), static_cast<Eigen::Index>(head_dim / 2)) {
        const double n = static_cast<double>(head_dim);
        for (Eigen::Index p = 0; p < cos.rows(); ++p) {
            for (Eigen::Index d = 0; d < cos.cols(); ++d) {
                const double angle = static_cast<double>(p) * std::pow(base, -2.0 * static_cast<double>(d) / n);
                cos(p, d) = std::cos(angle);
                sin(p, d) = std::sin(angle);
            }
        }
    }
};

// sign -1 applies the inverse rotation (used for gradients).
void rope_rows(Mat& m, std::size_t heads, const RopeTable& table, double sign) {
    const auto group = table.cos.rows();
    const auto pairs = table.cos.cols();
    const Eigen::Index dh = m.cols() / static_cast<Eigen::Index>(heads);
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        const Eigen::Index pos = t % group;
        if (pos == 0) {
            continue;
        }
        for (std::size_t h = 0; h < heads; ++h) {
            double* x = m.data() + t * m.cols() + static_cast<Eigen::Index>(h) * dh;
            for (Eigen::Index d = 0; d < pairs; ++d) {
                const double c = table.cos(pos, d);
                const double s = sign * table.sin(pos, d);
                const double x0 = x[2 * d];
                const double x1 = x[2 * d + 1];
                x[2 * d] = x0 * c - x1 * s;
                x[2 * d + 1] = x0 * s + x1 * c;
            }
        }
    }
}

void check_finite(const Mat& m, const char* stack, std::size_t layer) {
    if (!m.allFinite()) {
        fail(ErrorKind::numeric,
             std::string("rqdit: non-finite activation in ") + stack + " layer " + std::to_string(layer));
    }
}

struct BlockSettings {
    std::size_t heads = 1;
    std::size_t group = 1;
    const RopeTable* rope = nullptr;  // null disables RoPE
};

// sc is SiLU of the conditioning, shared by every block of a stack.
Mat block_forward(const ParamStore& ps, const BlockParams& bp, const Mat& x, const Mat& sc, const BlockSettings& s,
                  BlockCache* cache) {
    const Eigen::Index d = x.cols();
    const Eigen::Index n = x.rows();
    const std::size_t dh = static_cast<std::size_t>(d) / s.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat mod = linear(ps, bp.ada, sc);
    auto part = [&](int i) { return mod.middleCols(i * d, d); };

    Eigen::VectorXd rstd1, rstd2;
    Mat n1 = layer_norm(x, rstd1);
    Mat h1 = n1.cwiseProduct((1.0 + part(1).array()).matrix()) + part(0);
    Mat q = linear(ps, bp.q, h1);
    Mat k = linear(ps, bp.k, h1);
    Mat v = linear(ps, bp.v, h1);
    if (s.rope) {
        rope_rows(q, s.heads, *s.rope, 1.0);
        rope_rows(k, s.heads, *s.rope, 1.0);
    }
    Mat o(n, d);
    const auto g = static_cast<Eigen::Index>(s.group);
    std::vector<Mat> probs(s.heads, Mat(n, g));
    for (std::size_t h = 0; h < s.heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h * dh);
        const auto w = static_cast<Eigen::Index>(dh);
        for (Eigen::Index start = 0; start < n; start += g) {
            auto p = probs[h].middleRows(start, g);
            p.noalias() = q.block(start, col, g, w) * k.block(start, col, g, w).transpose();
            for (Eigen::Index r = 0; r < g; ++r) {
                const double top = p.row(r).maxCoeff();
                p.row(r) = ((p.row(r).array() - top) * inv_sqrt).exp().matrix();
                p.row(r) /= p.row(r).sum();
            }
            o.block(start, col, g, w).noalias() = p * v.block(start, col, g, w);
        }
    }
    Mat attn = linear(ps, bp.o, o);
    Mat x1 = x + part(2).cwiseProduct(attn);
    Mat n2 = layer_norm(x1, rstd2);
    Mat h2 = n2.cwiseProduct((1.0 + part(4).array()).matrix()) + part(3);
    Mat m1 = linear(ps, bp.m1, h2);
    Mat gt = gelu_tanh(m1);
    Mat gm = (0.5 * m1.array() * (1.0 + gt.array())).matrix();
    Mat m = linear(ps, bp.m2, gm);
    Mat out = x1 + part(5).cwiseProduct(m);
    if (cache) {
        *cache = BlockCache{x,           std::move(mod), std::move(n1),   std::move(h1),    std::move(q),
                            std::move(k), std::move(v),   std::move(o),    std::move(attn),  std::move(x1),
                            std::move(n2), std::move(h2), std::move(m1),   std::move(gt),    std::move(gm),
                            std::move(m), std::move(rstd1), std::move(rstd2), std::move(probs)};
    }
    return out;
}

// Returns dL/dx; adds dL/d(sc) into dsc.
Mat block_backward(ParamStore& ps, const BlockParams& bp, const BlockCache& bc, const Mat& sc, const Mat& dout,
                   const BlockSettings& s, Mat& dsc) {
    const Eigen::Index d = bc.x.cols();
    const Eigen::Index n = bc.x.rows();
    const std::size_t dh = static_cast<std::size_t>(d) / s.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    auto part = [&](int i) { return bc.mod.middleCols(i * d, d); };
    Mat dmod(n, 6 * d);
    auto dpart = [&](int i) { return dmod.middleCols(i * d, d); };

    dpart(5) = dout.cwiseProduct(bc.m);
    Mat dm = dout.cwiseProduct(part(5));
    Mat dgm = linear_back(ps, bp.m2, bc.gm, dm);
    Mat dm1 = gelu_back(bc.m1, bc.gt, dgm);
    Mat dh2 = linear_back(ps, bp.m1, bc.h2, dm1);
    dpart(4) = dh2.cwiseProduct(bc.n2);
    dpart(3) = dh2;
    Mat dx1 = dout + layer_norm_back(bc.n2, bc.rstd2, dh2.cwiseProduct((1.0 + part(4).array()).matrix()));

    dpart(2) = dx1.cwiseProduct(bc.attn);
    Mat dattn = dx1.cwiseProduct(part(2));
    Mat dout_heads = linear_back(ps, bp.o, bc.o, dattn);

    Mat dq(n, d);
    Mat dk(n, d);
    Mat dv(n, d);
    const auto g = static_cast<Eigen::Index>(s.group);
    Mat ds(g, g);
    for (std::size_t h = 0; h < s.heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h * dh);
        const auto w = static_cast<Eigen::Index>(dh);
        for (Eigen::Index start = 0; start < n; start += g) {
            const auto p = bc.probs[h].middleRows(start, g);
            const auto dob = dout_heads.block(start, col, g, w);
            dv.block(start, col, g, w).noalias() = p.transpose() * dob;
            ds.noalias() = dob * bc.v.block(start, col, g, w).transpose();
            ds.array() *= p.array();
            for (Eigen::Index r = 0; r < g; ++r) {
                ds.row(r) -= p.row(r) * ds.row(r).sum();
            }
            ds *= inv_sqrt;
            dq.block(start, col, g, w).noalias() = ds * bc.k.block(start, col, g, w);
            dk.block(start, col, g, w).noalias() = ds.transpose() * bc.q.block(start, col, g, w);
        }
    }
    if (s.rope) {
        rope_rows(dq, s.heads, *s.rope, -1.0);
        rope_rows(dk, s.heads, *s.rope, -1.0);
    }
    Mat dh1 = linear_back(ps, bp.q, bc.h1, dq);
    dh1 += linear_back(ps, bp.k, bc.h1, dk);
    dh1 += linear_back(ps, bp.v, bc.h1, dv);
    dpart(1) = dh1.cwiseProduct(bc.n1);
    dpart(0) = dh1;
    Mat dx = dx1 + layer_norm_back(bc.n1, bc.rstd1, dh1.cwiseProduct((1.0 + part(1).array()).matrix()));

    dsc += linear_back(ps, bp.ada, sc, dmod);
    return dx;
}

Mat to_mat(std::span<const double> v, std::size_t rows, std::size_t cols) {
    require(v.size() == rows * cols, ErrorKind::config,
            "rqdit: expected " + std::to_string(rows * cols) + " values, got " + std::to_string(v.size()));
    return Eigen::Map<const Mat>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::vector<double> to_vec(const Mat& m) { return {m.data(), m.data() + m.size()}; }

// Sums consecutive runs of `depth` rows.
Mat depth_sum(const Mat& x, std::size_t frames, std::size_t depth) {
    Mat out = Mat::Zero(static_cast<Eigen::Index>(frames), x.cols());
    for (std::size_t i = 0; i < frames; ++i) {
        for (std::size_t j = 0; j < depth; ++j) {
            out.row(static_cast<Eigen::Index>(i)) += x.row(static_cast<Eigen::Index>(i * depth + j));
        }
    }
    return out;
}

Mat broadcast_depth(const Mat& x, std::size_t depth) {
    Mat out(x.rows() * static_cast<Eigen::Index>(depth), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < depth; ++j) {
            out.row(i * static_cast<Eigen::Index>(depth) + static_cast<Eigen::Index>(j)) = x.row(i);
        }
    }
    return out;
}

}  // namespace

void RQDiTConfig::validate() const {
    require(hidden_dim >= 1 && n_heads >= 1 && n_layers >= 1 && mlp_ratio >= 1, ErrorKind::config,
            "RQDiTConfig: hidden_dim, n_heads, n_layers and mlp_ratio must be >= 1");
    require(hidden_dim % n_heads == 0, ErrorKind::config,
            "RQDiTConfig: hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
                std::to_string(n_heads));
    require(head_dim() % 2 == 0, ErrorKind::config,
            "RQDiTConfig: head dimension " + std::to_string(head_dim()) + " is odd; RoPE needs pairs");
    require(codebook_size >= 1 && depth >= 1 && latent_dim >= 1, ErrorKind::config,
            "RQDiTConfig: K, D and H must be >= 1");
    require(rope_base > 0.0, ErrorKind::config, "RQDiTConfig: rope_base must be positive");
}

std::vector<double> embed_codes(const CodeGrid& grid, const CodebookSet& books) {
    require(grid.depth() == books.depth() && grid.codebook_size() == books.codebook_size(), ErrorKind::config,
            "embed_codes: grid D/K do not match the codebooks");
    grid.validate(true);
    const std::size_t h = books.dim();
    std::vector<double> out(grid.size() * h, 0.0);
    for (std::size_t i = 0; i < grid.frames(); ++i) {
        for (std::size_t j = 0; j < grid.depth(); ++j) {
            const Code c = grid(i, j);
            if (c == grid.mask()) {
                continue;
            }
            const auto e = books.entry(j, static_cast<std::size_t>(c));
            std::copy(e.begin(), e.end(), out.begin() + static_cast<std::ptrdiff_t>((i * grid.depth() + j) * h));
        }
    }
    return out;
}

void rope_apply(std::span<double> head, double position, double base) {
    require(head.size() % 2 == 0, ErrorKind::config,
            "rope_apply: head dimension " + std::to_string(head.size()) + " is odd");
    if (position == 0.0) {
        return;
    }
    const double n = static_cast<double>(head.size());
    for (std::size_t d = 0; d < head.size() / 2; ++d) {
        const double angle = position * std::pow(base, -2.0 * static_cast<double>(d) / n);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x0 = head[2 * d];
        const double x1 = head[2 * d + 1];
        head[2 * d] = x0 * c - x1 * s;
        head[2 * d + 1] = x0 * s + x1 * c;
    }
}

struct RQDiT::Impl {
    Linear clean1, clean2, noisy1, noisy2;
    std::vector<BlockParams> frame, depth;
    Linear head1, head2;
    std::optional<ForwardCache> cache;

    std::optional<RopeTable> rope_table(const RQDiT& m, std::size_t group) const {
        if (m.hooks_.disable_rope) {
            return std::nullopt;
        }
        return RopeTable(group, m.cfg_.head_dim(), m.cfg_.rope_base);
    }

    Mat input_mlp(const ParamStore& ps, const Linear& l1, const Linear& l2, const Mat& e, InputCache* c) const {
        Mat a1 = linear(ps, l1, e);
        Mat s1 = silu(a1);
        Mat out = linear(ps, l2, s1);
        if (c) {
            *c = {e, std::move(a1), std::move(s1)};
        }
        return out;
    }

    void input_back(ParamStore& ps, const Linear& l1, const Linear& l2, const InputCache& c, const Mat& dy) const {
        Mat ds1 = linear_back(ps, l2, c.s1, dy);
        linear_back(ps, l1, c.e, silu_back(c.a1, ds1));
    }

    Mat stack(const RQDiT& m, const std::vector<BlockParams>& blocks, const char* label, Mat x, const Mat& c,
              std::size_t group, StackCache* cache, std::optional<std::size_t> only = {}) const {
        const auto table = rope_table(m, group);
        const BlockSettings s{m.cfg_.n_heads, group, table ? &*table : nullptr};
        Mat sc = silu(c);
        if (cache) {
            cache->blocks.resize(blocks.size());
        }
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            if (only && *only != l) {
                continue;
            }
            x = block_forward(m.params_, blocks[l], x, sc, s, cache ? &cache->blocks[l] : nullptr);
            check_finite(x, label, l);
        }
        if (cache) {
            cache->c = c;
            cache->sc = std::move(sc);
        }
        return x;
    }

    // Returns dL/dx; adds dL/dc into dc.
    Mat stack_back(RQDiT& m, const std::vector<BlockParams>& blocks, const StackCache& cache, std::size_t group,
                   Mat dx, Mat& dc) const {
        const auto table = rope_table(m, group);
        const BlockSettings s{m.cfg_.n_heads, group, table ? &*table : nullptr};
        Mat dsc = Mat::Zero(cache.sc.rows(), cache.sc.cols());
        for (std::size_t l = blocks.size(); l-- > 0;) {
            dx = block_backward(m.params_, blocks[l], cache.blocks[l], cache.sc, dx, s, dsc);
        }
        dc += silu_back(cache.c, dsc);
        return dx;
    }

    // frames counts every stacked example; frame attention stays within runs
    // of frame_group frames.
    Mat forward(const RQDiT& m, const Mat& clean_embed, const Mat& noisy_embed, std::size_t frames,
                std::size_t frame_group, ForwardCache* fc, Mat* frame_out = nullptr) const {
        const std::size_t depth = m.cfg_.depth;
        const ParamStore& ps = m.params_;
        Mat x = input_mlp(ps, clean1, clean2, clean_embed, fc ? &fc->clean : nullptr);
        Mat y = input_mlp(ps, noisy1, noisy2, noisy_embed, fc ? &fc->noisy : nullptr);
        check_finite(x, "clean input MLP", 0);
        check_finite(y, "noisy input MLP", 0);
        Mat f;
        if (m.hooks_.frozen_frame_output) {
            f = to_mat(*m.hooks_.frozen_frame_output, frames, m.cfg_.hidden_dim);
        } else {
            f = stack(m, frame, "frame-DiT", depth_sum(x, frames, depth), depth_sum(y, frames, depth), frame_group,
                      fc ? &fc->frame_stack : nullptr);
        }
        if (frame_out) {
            *frame_out = f;
        }
        Mat g = stack(m, this->depth, "depth-DiT", x + broadcast_depth(f, depth), y, depth,
                      fc ? &fc->depth_stack : nullptr);
        Eigen::VectorXd rstd;
        Mat ng = layer_norm(g, rstd);
        Mat ah = linear(ps, head1, ng);
        Mat sh = silu(ah);
        Mat logits = linear(ps, head2, sh);
        check_finite(logits, "output head", 0);
        if (fc) {
            fc->frames = frames;
            fc->frame_group = frame_group;
            fc->depth = depth;
            fc->frame_frozen = m.hooks_.frozen_frame_output.has_value();
            fc->g = std::move(g);
            fc->ng = std::move(ng);
            fc->ah = std::move(ah);
            fc->sh = std::move(sh);
            fc->rstd_head = std::move(rstd);
        }
        return logits;
    }
};

RQDiT::RQDiT(const RQDiTConfig& cfg, CodebookSet books, std::uint64_t seed)
    : cfg_(cfg), books_(std::move(books)), impl_(std::make_unique<Impl>()) {
    cfg_.validate();
    require(books_.depth() == cfg_.depth && books_.codebook_size() == cfg_.codebook_size &&
                books_.dim() == cfg_.latent_dim,
            ErrorKind::config,
            "RQDiT: codebooks are D=" + std::to_string(books_.depth()) + " K=" + std::to_string(books_.codebook_size()) +
                " H=" + std::to_string(books_.dim()) + " but config says D=" + std::to_string(cfg_.depth) +
                " K=" + std::to_string(cfg_.codebook_size) + " H=" + std::to_string(cfg_.latent_dim));
    const std::size_t d = cfg_.hidden_dim;
    auto add = [&](const std::string& name, std::size_t in, std::size_t out) {
        Linear l;
        l.in = in;
        l.out = out;
        l.w = params_.add(name + ".weight", {in, out});
        l.b = params_.add(name + ".bias", {out});
        return l;
    };
    auto& im = *impl_;
    im.clean1 = add("clean_mlp.0", cfg_.latent_dim, d);
    im.clean2 = add("clean_mlp.1", d, d);
    im.noisy1 = add("noisy_mlp.0", cfg_.latent_dim, d);
    im.noisy2 = add("noisy_mlp.1", d, d);
    auto blocks = [&](const std::string& prefix) {
        std::vector<BlockParams> out;
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = prefix + "." + std::to_string(l) + ".";
            BlockParams b;
            b.ada = add(p + "adaln", d, 6 * d);
            b.q = add(p + "attn.q", d, d);
            b.k = add(p + "attn.k", d, d);
            b.v = add(p + "attn.v", d, d);
            b.o = add(p + "attn.out", d, d);
            b.m1 = add(p + "mlp.0", d, cfg_.mlp_ratio * d);
            b.m2 = add(p + "mlp.1", cfg_.mlp_ratio * d, d);
            out.push_back(b);
        }
        return out;
    };
    im.frame = blocks("frame_dit");
    im.depth = blocks("depth_dit");
    im.head1 = add("head.0", d, d);
    im.head2 = add("head.1", d, cfg_.codebook_size);

    Rng rng(seed);
    auto init = [&](const Linear& l) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(l.in));
        for (double& w : params_.value(l.w)) {
            w = scale * rng.normal();
        }
    };
    for (const Linear* l : {&im.clean1, &im.clean2, &im.noisy1, &im.noisy2, &im.head1}) {
        init(*l);
    }
    for (const auto* stack : {&im.frame, &im.depth}) {
        for (const auto& b : *stack) {
            for (const Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.m1, &b.m2}) {
                init(*l);
            }
        }
    }
    // adaLN projections and the final head layer start at zero.
}

RQDiT::~RQDiT() = default;
RQDiT::RQDiT(RQDiT&&) noexcept = default;
RQDiT& RQDiT::operator=(RQDiT&&) noexcept = default;

ConditionalProbs RQDiT::logits_from_embeddings(std::span<const double> clean_embed,
                                               std::span<const double> noisy_embed, std::size_t frames) const {
    const std::size_t rows = frames * cfg_.depth;
    Mat logits = impl_->forward(*this, to_mat(clean_embed, rows, cfg_.latent_dim),
                                to_mat(noisy_embed, rows, cfg_.latent_dim), frames, frames, nullptr);
    ConditionalProbs out(frames, cfg_.depth, cfg_.codebook_size);
    out.values = to_vec(logits);
    return out;
}

ConditionalProbs RQDiT::predict(const MaskedGrid& masked, const CodeGrid& noisy) const {
    check_inputs(masked, noisy);
    noisy.validate(false);
    auto out = logits_from_embeddings(embed_codes(masked, books_), embed_codes(noisy, books_), masked.frames());
    softmax_rows(out);
    return out;
}

ConditionalProbs RQDiT::forward_logits(const MaskedGrid& masked, const CodeGrid& noisy) {
    return forward_logits_batch({&masked, 1}, {&noisy, 1});
}

ConditionalProbs RQDiT::forward_logits_batch(std::span<const MaskedGrid> masked, std::span<const CodeGrid> noisy) {
    require(!masked.empty() && masked.size() == noisy.size(), ErrorKind::config,
            "RQDiT: masked and noisy batch sizes differ or are zero");
    const std::size_t frames = masked.front().frames();
    const std::size_t per = masked.front().size() * cfg_.latent_dim;
    std::vector<double> clean_embed(per * masked.size());
    std::vector<double> noisy_embed(per * masked.size());
    for (std::size_t b = 0; b < masked.size(); ++b) {
        check_inputs(masked[b], noisy[b]);
        require(masked[b].frames() == frames, ErrorKind::config, "RQDiT: batch examples must share L");
        noisy[b].validate(false);
        const auto ce = embed_codes(masked[b], books_);
        const auto ne = embed_codes(noisy[b], books_);
        std::copy(ce.begin(), ce.end(), clean_embed.begin() + static_cast<std::ptrdiff_t>(b * per));
        std::copy(ne.begin(), ne.end(), noisy_embed.begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    const std::size_t total = frames * masked.size();
    const std::size_t rows = total * cfg_.depth;
    ForwardCache fc;
    Mat logits = impl_->forward(*this, to_mat(clean_embed, rows, cfg_.latent_dim),
                                to_mat(noisy_embed, rows, cfg_.latent_dim), total, frames, &fc);
    impl_->cache = std::move(fc);
    ConditionalProbs out(total, cfg_.depth, cfg_.codebook_size);
    out.values = to_vec(logits);
    return out;
}

void RQDiT::backward(const ConditionalProbs& dlogits) {
    require(impl_->cache.has_value(), ErrorKind::usage, "RQDiT::backward called without a cached forward pass");
    ForwardCache fc = std::move(*impl_->cache);
    impl_->cache.reset();
    require(dlogits.frames == fc.frames && dlogits.depth == fc.depth && dlogits.codebook_size == cfg_.codebook_size,
            ErrorKind::config, "RQDiT::backward: gradient shape does not match the cached forward pass");
    auto& im = *impl_;
    const Mat dl = to_mat(dlogits.values, dlogits.positions(), cfg_.codebook_size);
    Mat dsh = linear_back(params_, im.head2, fc.sh, dl);
    Mat dng = linear_back(params_, im.head1, fc.ng, silu_back(fc.ah, dsh));
    Mat dg = layer_norm_back(fc.ng, fc.rstd_head, dng);

    Mat dy = Mat::Zero(dg.rows(), dg.cols());
    Mat dx = im.stack_back(*this, im.depth, fc.depth_stack, fc.depth, std::move(dg), dy);
    if (!fc.frame_frozen) {
        Mat dfc = Mat::Zero(static_cast<Eigen::Index>(fc.frames), dx.cols());
        Mat dfin =
            im.stack_back(*this, im.frame, fc.frame_stack, fc.frame_group, depth_sum(dx, fc.frames, fc.depth), dfc);
        dx += broadcast_depth(dfin, fc.depth);
        dy += broadcast_depth(dfc, fc.depth);
    }
    im.input_back(params_, im.clean1, im.clean2, fc.clean, dx);
    im.input_back(params_, im.noisy1, im.noisy2, fc.noisy, dy);
}

std::vector<double> RQDiT::frame_output(const MaskedGrid& masked, const CodeGrid& noisy) const {
    check_inputs(masked, noisy);
    const std::size_t rows = masked.size();
    Mat f;
    impl_->forward(*this, to_mat(embed_codes(masked, books_), rows, cfg_.latent_dim),
                   to_mat(embed_codes(noisy, books_), rows, cfg_.latent_dim), masked.frames(), masked.frames(), nullptr,
                   &f);
    return to_vec(f);
}

std::vector<double> RQDiT::apply_stack(Stack stack, std::span<const double> x, std::span<const double> cond,
                                       std::size_t tokens, std::size_t group,
                                       std::optional<std::size_t> only_layer) const {
    require(group >= 1 && tokens % group == 0, ErrorKind::config, "apply_stack: tokens must be a multiple of group");
    require(!only_layer || *only_layer < cfg_.n_layers, ErrorKind::config, "apply_stack: layer index out of range");
    const auto& blocks = stack == Stack::frame ? impl_->frame : impl_->depth;
    const char* label = stack == Stack::frame ? "frame-DiT" : "depth-DiT";
    return to_vec(impl_->stack(*this, blocks, label, to_mat(x, tokens, cfg_.hidden_dim),
                               to_mat(cond, tokens, cfg_.hidden_dim), group, nullptr, only_layer));
}

void RQDiT::zero_all_but_output_bias() {
    const std::size_t keep = impl_->head2.b;
    for (std::size_t t = 0; t < params_.tensors().size(); ++t) {
        if (t != keep) {
            auto v = params_.value(t);
            std::fill(v.begin(), v.end(), 0.0);
        }
    }
}

}  // namespace addse
