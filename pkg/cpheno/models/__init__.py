from cpheno.models.teacher import TeacherCache, TeacherHandle
from cpheno.models.text_encoder import TextEncoderHandle, TinyTextEncoder, embed_texts
from cpheno.models.tokenizer import HashingTokenizer
from cpheno.models.vision_encoder import TinyVisionEncoder
from cpheno.models.vl_model import VLModel, build_vl_model, encode_image, encode_text
