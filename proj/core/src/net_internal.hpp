#pragma once

#include <memory>
#include <vector>

#include "advsr/features.hpp"
#include "advsr/map.hpp"
#include "advsr/matrix.hpp"
#include "advsr/model.hpp"

namespace advsr::detail {

struct NetContext {
    int input_len = 0;
    std::vector<Matrix> acts;      // acts[0] = channels x time input, then post-relu per conv
    std::vector<Matrix> pre_acts;  // pre-relu per conv
    std::vector<double> pooled;
    std::vector<double> embedding;
    std::vector<double> logits;
};

struct ParamGrads {
    std::vector<Matrix> conv_w;
    std::vector<std::vector<double>> conv_b;
    Matrix emb_w;
    std::vector<double> emb_b;
    Matrix cls_w;
    std::vector<double> cls_b;

    void init_like(const Model& m);
    void scale(double f);
};

struct ChainContext {
    const DefenseStack* stack = nullptr;
    std::vector<std::unique_ptr<MapContext>> wave_ctx;
    std::vector<std::vector<double>> wave_out;
    PipelineContext pipeline;
    NetContext net;
    std::vector<double> logits;
};

int conv_out_len(int in_len, int kernel, int stride);

std::vector<double> net_forward(const Model& m, const Matrix& features, NetContext* ctx);
Matrix net_backward(const Model& m, const NetContext& ctx, const std::vector<double>& grad_logits,
                    ParamGrads* grads);

ChainContext chain_forward(const Model& m, const Waveform& w, const DefenseStack* stack, Rng* rng,
                           bool keep_for_backward);
std::vector<double> chain_backward(const Model& m, const ChainContext& ctx,
                                   const std::vector<double>& grad_logits, ParamGrads* grads);

}  // namespace advsr::detail
